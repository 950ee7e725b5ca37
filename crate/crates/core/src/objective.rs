//! Neighbour-prediction loss.
//!
//! For every walk position `i` with representation `u_i` and sampled neighbours `C_i`, the loss is
//! `−Σ_{v' ∈ C_i} log softmax(u_i · O_c)_{v'}`, where the softmax runs over a candidate set of
//! output embeddings rather than all nodes. One candidate set is shared by a whole batch and always
//! contains every target in the batch.

use std::collections::HashMap;

use rand::Rng;

use crate::graph::Graph;
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::walks::NeighborSet;
use crate::{Error, Result};

/// Node ids whose output embeddings take part in a batch's softmax, in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    ids: Vec<usize>,
    column: HashMap<usize, usize>,
}

impl CandidateSet {
    pub fn new(mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        let column = ids.iter().enumerate().map(|(c, &v)| (v, c)).collect();
        CandidateSet { ids, column }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.column.contains_key(&v)
    }

    /// Position of node `v` among the candidates.
    pub fn column_of(&self, v: usize) -> Option<usize> {
        self.column.get(&v).copied()
    }
}

/// `size` present nodes drawn uniformly without replacement, joined with `targets`.
pub fn sample_candidates<R: Rng + ?Sized>(
    graph: &Graph,
    size: usize,
    targets: impl IntoIterator<Item = usize>,
    rng: &mut R,
) -> Result<CandidateSet> {
    let present = graph.present_nodes();
    if size > present.len() {
        return Err(Error::Config(format!("candidate set size {size} exceeds the {} present nodes", present.len())));
    }
    let mut ids: Vec<usize> =
        rand::seq::index::sample(rng, present.len(), size).into_iter().map(|i| present[i]).collect();
    for t in targets {
        if t >= graph.num_nodes() {
            return Err(Error::NodeOutOfRange { id: t, num_nodes: graph.num_nodes() });
        }
        ids.push(t);
    }
    Ok(CandidateSet::new(ids))
}

/// Target columns for each row; every neighbour must be a candidate.
pub fn target_columns(sets: &[NeighborSet], candidates: &CandidateSet) -> Result<Vec<Vec<usize>>> {
    sets.iter()
        .map(|s| {
            s.members
                .iter()
                .map(|&v| {
                    candidates
                        .column_of(v)
                        .ok_or_else(|| Error::Config(format!("neighbour {v} is not in the candidate set")))
                })
                .collect()
        })
        .collect()
}

/// Records `scale · Σ_rows Σ_{v' ∈ C_row} −log softmax(u_row · O_cᵀ)_{v'}` on the tape.
///
/// `reps` is `R × d` (one row per walk position, matching `sets`), `candidate_rows` is `|c| × d`
/// with row `j` the output embedding of `candidates.ids()[j]`. Pass `scale = 1 / batch_walks` for
/// the per-walk mean.
pub fn sampled_softmax_loss<T: Real>(
    tape: &mut Tape<T>,
    reps: Var,
    sets: &[NeighborSet],
    candidate_rows: Var,
    candidates: &CandidateSet,
    scale: T,
) -> Result<Var> {
    let rows = tape.value(candidate_rows).rows();
    if rows != candidates.len() {
        return Err(Error::ShapeMismatch {
            op: "sampled_softmax_loss",
            left: tape.value(candidate_rows).shape().to_vec(),
            right: vec![candidates.len()],
        });
    }
    let targets = target_columns(sets, candidates)?;
    let logits = tape.matmul_nt(reps, candidate_rows)?;
    let nll = tape.softmax_nll(logits, &targets)?;
    tape.scale(nll, scale)
}

/// Selects the candidate rows of a full output matrix `O` already on the tape.
pub fn gather_candidates<T: Real>(tape: &mut Tape<T>, output: Var, candidates: &CandidateSet) -> Result<Var> {
    tape.gather_rows(output, candidates.ids())
}

/// The same loss computed directly in `f64` with plain loops, over an explicit candidate list
/// (for instance every present node). `reps` is `R × d`, `output` the full `|V| × d` matrix.
pub fn reference_softmax_loss(
    reps: &Tensor<f64>,
    output: &Tensor<f64>,
    sets: &[NeighborSet],
    candidates: &[usize],
    scale: f64,
) -> Result<f64> {
    let d = reps.cols();
    if output.cols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: output.cols() });
    }
    if sets.len() != reps.rows() {
        return Err(Error::ShapeMismatch {
            op: "reference_softmax_loss",
            left: reps.shape().to_vec(),
            right: vec![sets.len()],
        });
    }
    let mut total = 0.0;
    for (r, set) in sets.iter().enumerate() {
        let u = reps.row(r);
        let score = |v: usize| -> f64 { u.iter().zip(output.row(v)).map(|(a, b)| a * b).sum() };
        let scores: Vec<f64> = candidates.iter().map(|&v| score(v)).collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        for &t in &set.members {
            if !candidates.contains(&t) {
                return Err(Error::Config(format!("neighbour {t} is not in the candidate set")));
            }
            total += lse - score(t);
        }
    }
    Ok(total * scale)
}
