//! Embeddings for nodes that were absent during training.
//!
//! A new node's embedding is the average, over `Z` random walks rooted at it, of the encoder's
//! output at the walk's first position. Walks run on the full graph, so they may pass through other
//! new nodes as well as training nodes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{encode_batch, positional_for, ModelParams};
use crate::exec::Execution;
use crate::graph::{FeatureMatrix, Graph, IdMap};
use crate::numerics::Tape;
use crate::rng::{self, Stream};
use crate::walks::walk_from;
use crate::{Error, Result};

/// Nodes encoded per tape.
const NODES_PER_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    /// Walks averaged per node (`Z`).
    pub walks: usize,
    pub seed: u64,
    /// Not part of the serialised configuration: results do not depend on it.
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig { walks: 8, seed: 0, execution: Execution::default() }
    }
}

/// One embedding row per node in `nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub nodes: Vec<usize>,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Embeddings {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Row of node `v`, if present.
    pub fn get(&self, v: usize) -> Option<&[f32]> {
        self.nodes.iter().position(|&n| n == v).map(|i| self.row(i))
    }
}

/// Rows of the output matrix `O`: the embeddings of training nodes.
pub fn output_embeddings(params: &ModelParams<f32>, nodes: &[usize]) -> Result<Embeddings> {
    let o = params.output();
    let dim = o.cols();
    let mut data = Vec::with_capacity(nodes.len() * dim);
    for &v in nodes {
        if v >= o.rows() {
            return Err(Error::NodeOutOfRange { id: v, num_nodes: o.rows() });
        }
        data.extend_from_slice(o.row(v));
    }
    Ok(Embeddings { nodes: nodes.to_vec(), dim, data })
}

/// The `Z` inference walks of node `v`; walk `z` uses its own stream keyed by `(seed, v, z)`.
pub fn inference_walks(graph: &Graph, v: usize, length: usize, config: &InferConfig) -> Result<Vec<Vec<usize>>> {
    if v >= graph.num_nodes() {
        return Err(Error::NodeOutOfRange { id: v, num_nodes: graph.num_nodes() });
    }
    if !graph.is_present(v) {
        return Err(Error::AbsentNode(v));
    }
    Ok((0..config.walks)
        .map(|z| {
            let mut r = rng::stream(config.seed, Stream::Inference, &[v as u64, z as u64]);
            walk_from(graph, v, length, &mut r).nodes
        })
        .collect())
}

/// Inferred embeddings of `nodes` on `graph` (normally the full graph including the new nodes).
pub fn infer_embeddings(
    params: &ModelParams<f32>,
    graph: &Graph,
    features: &FeatureMatrix,
    nodes: &[usize],
    config: &InferConfig,
) -> Result<Embeddings> {
    if config.walks == 0 {
        return Err(Error::Config("inference needs at least one walk per node".into()));
    }
    let enc = params.config();
    let d = enc.dim;
    let n = enc.walk_length;
    let positional = positional_for::<f32>(enc)?;
    let chunks: Vec<&[usize]> = nodes.chunks(NODES_PER_CHUNK).collect();
    let parts = config.execution.map_slice(&chunks, |chunk| -> Result<Vec<f32>> {
        let mut walks = Vec::with_capacity(chunk.len() * config.walks);
        for &v in chunk.iter() {
            walks.extend(inference_walks(graph, v, n, config)?);
        }
        let refs: Vec<&[usize]> = walks.iter().map(Vec::as_slice).collect();
        let mut tape = Tape::new();
        let vars = params.bind_encoder(&mut tape, false)?;
        let out = encode_batch(&mut tape, enc, &vars, &refs, features, positional.as_ref())?;
        let out = tape.value(out.output);
        let mut emb = vec![0f32; chunk.len() * d];
        for (i, row) in emb.chunks_exact_mut(d).enumerate() {
            for z in 0..config.walks {
                let first = out.row((i * config.walks + z) * n);
                row.iter_mut().zip(first).for_each(|(a, &x)| *a += x);
            }
            let inv = 1.0 / config.walks as f32;
            row.iter_mut().for_each(|a| *a *= inv);
        }
        Ok(emb)
    });
    let mut data = Vec::with_capacity(nodes.len() * d);
    for p in parts {
        data.extend(p?);
    }
    Ok(Embeddings { nodes: nodes.to_vec(), dim: d, data })
}

/// Writes `node_id<TAB>e_1<TAB>...<TAB>e_d` lines, using original ids when a map is given.
pub fn save_embeddings(emb: &Embeddings, id_map: Option<&IdMap>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(emb.data.len() * 12);
    for (i, &v) in emb.nodes.iter().enumerate() {
        match id_map.and_then(|m| m.original(v)) {
            Some(orig) => out.push_str(orig),
            None => {
                let _ = write!(out, "{v}");
            }
        }
        for x in emb.row(i) {
            let _ = write!(out, "\t{x}");
        }
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads embeddings written by [`save_embeddings`] without an id map.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Embeddings> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut nodes = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut toks = line.split('\t');
        let id = toks.next().unwrap_or_default();
        let id = id.parse().map_err(|_| Error::parse(path, i + 1, format!("invalid node id {id:?}")))?;
        let row: Vec<f32> = toks
            .map(|t| t.parse().map_err(|_| Error::parse(path, i + 1, format!("invalid number {t:?}"))))
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => return Err(Error::DimensionMismatch { expected: d, got: row.len() }),
            _ => {}
        }
        nodes.push(id);
        data.extend(row);
    }
    Ok(Embeddings { nodes, dim: dim.unwrap_or(0), data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_walk, EncoderConfig};

    fn setup() -> (ModelParams<f32>, Graph, FeatureMatrix) {
        let config =
            EncoderConfig { dim: 4, layers: 1, heads: 2, ff_hidden: 5, walk_length: 3, ..EncoderConfig::default() };
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]).unwrap();
        let f = FeatureMatrix::new(4, (0..24).map(|i| (i as f32 * 0.37).cos()).collect()).unwrap();
        (ModelParams::init(&config, 6, 1).unwrap(), g, f)
    }

    #[test]
    fn embedding_is_mean_of_first_positions() {
        let (p, g, f) = setup();
        let config = InferConfig { walks: 3, seed: 4, execution: Execution::Sequential };
        let emb = infer_embeddings(&p, &g, &f, &[2, 5], &config).unwrap();
        for (i, &v) in [2usize, 5].iter().enumerate() {
            let walks = inference_walks(&g, v, 3, &config).unwrap();
            let mut mean = [0f32; 4];
            for w in &walks {
                assert_eq!(w[0], v);
                let out = encode_walk(&p, w, &f).unwrap();
                mean.iter_mut().zip(out.row(0)).for_each(|(m, &x)| *m += x / 3.0);
            }
            for (a, b) in emb.row(i).iter().zip(mean) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let (p, g, f) = setup();
        let nodes: Vec<usize> = (0..6).cycle().take(70).collect();
        let seq = InferConfig { walks: 2, seed: 0, execution: Execution::Sequential };
        let par = InferConfig { execution: Execution::Parallel, ..seq };
        assert_eq!(
            infer_embeddings(&p, &g, &f, &nodes, &seq).unwrap(),
            infer_embeddings(&p, &g, &f, &nodes, &par).unwrap()
        );
    }

    #[test]
    fn rejects_absent_nodes() {
        let (p, g, f) = setup();
        let removed = g.remove_nodes(&[3]).unwrap();
        let err = infer_embeddings(&p, &removed, &f, &[3], &InferConfig::default());
        assert!(matches!(err, Err(Error::AbsentNode(3))));
    }

    #[test]
    fn save_and_load() {
        let (p, ..) = setup();
        let emb = output_embeddings(&p, &[4, 0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        save_embeddings(&emb, None, &path).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), emb);
        assert_eq!(emb.get(0).unwrap(), p.output().row(0));
    }
}
