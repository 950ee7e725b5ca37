//! Training loop.
//!
//! Each epoch samples a fresh set of walks, shuffles them and cuts them into batches. For every
//! batch, each walk position gets `M` neighbours drawn with replacement, one candidate set is drawn
//! for the whole batch, and the mean per-walk loss is minimised with Adam. Batches are split into
//! fixed-size micro-batches whose gradients are computed independently (in parallel when enabled)
//! and summed in micro-batch order, so results do not depend on the thread count.
//!
//! After every epoch an optional validator scores the current parameters; the best-scoring epoch
//! is returned.

mod adam;
mod checkpoint;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_batch, positional_for, EncoderConfig, EncoderVars, ModelParams};
use crate::exec::Execution;
use crate::graph::{FeatureMatrix, Graph};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::objective::{sample_candidates, sampled_softmax_loss, CandidateSet};
use crate::rng::{self, derive_seed, Stream};
use crate::walks::{sample_neighbors, sample_walks, NeighborSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    /// Walks per root node per epoch (`T`).
    pub walks_per_root: usize,
    /// Neighbours sampled per walk position (`M`).
    pub neighbors: usize,
    /// Uniform candidates per batch, before adding the batch's targets.
    pub candidates: usize,
    pub batch_size: usize,
    /// Walks per independently differentiated chunk of a batch.
    pub micro_batch: usize,
    pub max_epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Not part of the serialised configuration: results do not depend on it.
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder: EncoderConfig::default(),
            walks_per_root: 16,
            neighbors: 4,
            candidates: 512,
            batch_size: 64,
            micro_batch: 16,
            max_epochs: 50,
            adam: AdamConfig::default(),
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        for (name, v) in [
            ("walks_per_root", self.walks_per_root),
            ("neighbors", self.neighbors),
            ("batch_size", self.batch_size),
            ("micro_batch", self.micro_batch),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to evaluate the loss on one batch.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub walks: Vec<Vec<usize>>,
    /// One neighbour set per walk position, walk-major.
    pub neighbor_sets: Vec<NeighborSet>,
    pub candidates: CandidateSet,
}

/// Draws neighbours and candidates for `walks`, the `batch`-th batch of `epoch`.
pub fn prepare_batch(
    graph: &Graph,
    walks: Vec<Vec<usize>>,
    config: &TrainConfig,
    epoch: usize,
    batch: usize,
) -> Result<TrainingBatch> {
    let mut sets = Vec::with_capacity(walks.len() * config.encoder.walk_length);
    for (j, walk) in walks.iter().enumerate() {
        let mut r = rng::stream(config.seed, Stream::Neighbors, &[epoch as u64, batch as u64, j as u64]);
        for &v in walk {
            sets.push(sample_neighbors(graph, v, config.neighbors, &mut r)?);
        }
    }
    let targets: Vec<usize> = sets.iter().flat_map(|s| s.members.iter().copied()).collect();
    let mut r = rng::stream(config.seed, Stream::Candidates, &[epoch as u64, batch as u64]);
    let candidates = sample_candidates(graph, config.candidates, targets, &mut r)?;
    Ok(TrainingBatch { walks, neighbor_sets: sets, candidates })
}

/// Records the scaled batch loss on `tape`: encode `walks`, then score each position's neighbours
/// against `candidate_rows` (`|c| × d`, output embeddings of the candidates in id order).
#[allow(clippy::too_many_arguments)]
pub fn walk_batch_loss<T: Real>(
    tape: &mut Tape<T>,
    config: &EncoderConfig,
    params: &EncoderVars,
    candidate_rows: Var,
    candidates: &CandidateSet,
    walks: &[&[usize]],
    neighbor_sets: &[NeighborSet],
    features: &FeatureMatrix,
    positional: Option<&Tensor<T>>,
    scale: T,
) -> Result<Var> {
    let encoded = encode_batch(tape, config, params, walks, features, positional)?;
    sampled_softmax_loss(tape, encoded.output, neighbor_sets, candidate_rows, candidates, scale)
}

/// Loss and gradients for one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    /// Gradients of the encoder tensors, in [`ModelParams::tensors`] order (without `O`).
    pub encoder: Vec<Tensor<f32>>,
    /// Gradient of the candidate rows of `O`, row `j` for `candidates.ids()[j]`.
    pub candidates: Tensor<f32>,
}

/// Mean per-walk loss of `batch` and its gradients, computed per micro-batch and summed in order.
pub fn batch_gradients(
    params: &ModelParams<f32>,
    batch: &TrainingBatch,
    features: &FeatureMatrix,
    micro_batch: usize,
    exec: Execution,
) -> Result<BatchGradients> {
    let config = params.config();
    let positional = positional_for::<f32>(config)?;
    let d = config.dim;
    let output = params.output();
    let mut rows = Vec::with_capacity(batch.candidates.len() * d);
    for &v in batch.candidates.ids() {
        rows.extend_from_slice(output.row(v));
    }
    let candidate_rows = Tensor::matrix(batch.candidates.len(), d, rows)?;
    let n = config.walk_length;
    let scale = 1.0 / batch.walks.len() as f32;
    let chunks = batch.walks.len().div_ceil(micro_batch);

    let parts = exec.map_indexed(chunks, |c| -> Result<(f64, Vec<Tensor<f32>>, Tensor<f32>)> {
        let lo = c * micro_batch;
        let hi = (lo + micro_batch).min(batch.walks.len());
        let walks: Vec<&[usize]> = batch.walks[lo..hi].iter().map(Vec::as_slice).collect();
        let sets = &batch.neighbor_sets[lo * n..hi * n];
        let mut tape = Tape::new();
        let vars = params.bind_encoder(&mut tape, true)?;
        let o = tape.param(candidate_rows.clone())?;
        let loss = walk_batch_loss(
            &mut tape,
            config,
            &vars,
            o,
            &batch.candidates,
            &walks,
            sets,
            features,
            positional.as_ref(),
            scale,
        )?;
        let grads = tape.backward(loss)?;
        let enc = vars.vars().iter().zip(params.tensors()).map(|(&v, t)| grads.get_or_zeros(v, t)).collect();
        Ok((tape.value(loss).item() as f64, enc, grads.get_or_zeros(o, &candidate_rows)))
    });

    let mut total = 0.0;
    let mut encoder: Option<Vec<Tensor<f32>>> = None;
    let mut cand: Option<Tensor<f32>> = None;
    for part in parts {
        let (l, enc, c) = part?;
        total += l;
        match (&mut encoder, &mut cand) {
            (Some(acc), Some(acc_c)) => {
                for (a, g) in acc.iter_mut().zip(&enc) {
                    a.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(a, &g)| *a += g);
                }
                acc_c.as_mut_slice().iter_mut().zip(c.as_slice()).for_each(|(a, &g)| *a += g);
            }
            _ => {
                encoder = Some(enc);
                cand = Some(c);
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let encoder = encoder.unwrap_or_default();
    if let Some(i) = encoder.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", params.names()[i])));
    }
    Ok(BatchGradients { loss: total, encoder, candidates: cand.unwrap_or_else(|| Tensor::zeros(&[0, d])) })
}

/// Parameters before the first update, as [`train`] initialises them.
pub fn initial_params(graph: &Graph, config: &TrainConfig) -> Result<ModelParams<f32>> {
    ModelParams::init(&config.encoder, graph.num_nodes(), derive_seed(config.seed, Stream::Init, &[]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub params: ModelParams<f32>,
    pub best_epoch: usize,
    pub best_validation: Option<f64>,
    pub history: Vec<EpochRecord>,
}

/// Scores parameters after an epoch; higher is better.
pub type Validator<'a> = dyn FnMut(&ModelParams<f32>) -> Result<f64> + 'a;

/// Trains on `graph` (absent nodes are never walked, sampled or updated).
///
/// With a validator the epoch with the highest score is kept (earliest on ties); otherwise the
/// last epoch. Stops with an error as soon as a batch loss is not finite.
pub fn train(
    graph: &Graph,
    features: &FeatureMatrix,
    config: &TrainConfig,
    mut validator: Option<&mut Validator<'_>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if features.dim() != config.encoder.dim {
        return Err(Error::DimensionMismatch { expected: config.encoder.dim, got: features.dim() });
    }
    if features.num_rows() < graph.num_nodes() {
        return Err(Error::MissingRow { what: "feature", id: features.num_rows() });
    }
    if config.candidates > graph.num_present() {
        return Err(Error::Config(format!(
            "candidates = {} exceeds the {} nodes in the training graph",
            config.candidates,
            graph.num_present()
        )));
    }
    let mut params = initial_params(graph, config)?;
    let mut adam = Adam::new(config.adam, params.tensors());
    let out_idx = params.output_index();
    let d = config.encoder.dim;
    let mut dense_output_grad = vec![0f32; params.output().numel()];

    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    let mut history = Vec::with_capacity(config.max_epochs);
    for epoch in 0..config.max_epochs {
        let walk_seed = derive_seed(config.seed, Stream::Walks, &[epoch as u64]);
        let walks =
            sample_walks(graph, config.walks_per_root, config.encoder.walk_length, walk_seed, config.execution)?;
        let mut order: Vec<usize> = (0..walks.walks.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, Stream::Shuffle, &[epoch as u64]));

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch_walks = idx.iter().map(|&i| walks.walks[i].nodes.clone()).collect();
            let batch = prepare_batch(graph, batch_walks, config, epoch, b)?;
            let g =
                batch_gradients(&params, &batch, features, config.micro_batch, config.execution).map_err(
                    |e| match e {
                        Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {}, batch {b}", epoch + 1)),
                        e => e,
                    },
                )?;
            loss_sum += g.loss;
            batches += 1;

            adam.begin_step();
            let tensors = params.tensors_mut();
            for (i, grad) in g.encoder.iter().enumerate() {
                adam.update(i, &mut tensors[i], grad.as_slice());
            }
            for (j, &v) in batch.candidates.ids().iter().enumerate() {
                dense_output_grad[v * d..(v + 1) * d].copy_from_slice(g.candidates.row(j));
            }
            adam.update(out_idx, &mut tensors[out_idx], &dense_output_grad);
            for &v in batch.candidates.ids() {
                dense_output_grad[v * d..(v + 1) * d].fill(0.0);
            }
        }

        let validation = match validator.as_deref_mut() {
            Some(f) => Some(f(&params)?),
            None => None,
        };
        let record = EpochRecord { epoch: epoch + 1, mean_loss: loss_sum / batches.max(1) as f64, validation };
        on_epoch(&record);
        history.push(record);
        let score = validation.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((s, _, _)) => validation.is_none() || score > *s,
        };
        if better {
            best = Some((score, epoch + 1, params.clone()));
        }
    }
    let (score, best_epoch, params) = match best {
        Some(b) => b,
        None => (f64::NEG_INFINITY, 0, params),
    };
    Ok(TrainOutcome { params, best_epoch, best_validation: score.is_finite().then_some(score), history })
}
