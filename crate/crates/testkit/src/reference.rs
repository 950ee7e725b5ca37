//! Straight-line `f64` reference encoder and full-softmax loss.
//!
//! Plain nested loops over `Vec<f64>` rows, reading parameters by name. Nothing here goes through
//! the tape, the GEMM kernels or the batched encoder.

use sanne::encoder::{EncoderConfig, ModelParams};
use sanne::graph::FeatureMatrix;
use sanne::walks::NeighborSet;

type Rows = Vec<Vec<f64>>;

/// Everything the reference forward pass computes for one walk.
#[derive(Debug, Clone)]
pub struct ReferenceOutput {
    /// Final representations, `N` rows of `d`.
    pub output: Rows,
    /// `[layer][head]` attention matrices (`N × N`); empty for layers without attention.
    pub attention: Vec<Vec<Rows>>,
    /// Every layer-norm output in evaluation order.
    pub norms: Vec<Rows>,
}

fn param<'a>(params: &'a ModelParams<f64>, name: &str) -> (usize, usize, &'a [f64]) {
    let t = params.tensor(name).unwrap_or_else(|| panic!("missing parameter {name}"));
    let cols = if t.shape().len() == 2 { t.shape()[1] } else { t.numel() };
    (t.numel() / cols.max(1), cols, t.as_slice())
}

/// `x · Wᵀ` for `W` stored row-major `out × in`.
fn linear(x: &Rows, w: (usize, usize, &[f64]), bias: Option<&[f64]>) -> Rows {
    let (out, inp, w) = w;
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), inp);
            (0..out)
                .map(|o| {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for i in 0..inp {
                        acc += row[i] * w[o * inp + i];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Rows, gamma: &[f64], beta: &[f64], eps: f64) -> Rows {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = (var + eps).sqrt();
            row.iter().enumerate().map(|(j, v)| gamma[j] * (v - mean) / sd + beta[j]).collect()
        })
        .collect()
}

fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

/// Sinusoidal position code of position `i` (1-based) in `d` dimensions.
pub fn position_code(i: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|k| {
            let j = (k / 2) as f64;
            let angle = i as f64 / 10000f64.powf(2.0 * j / d as f64);
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

fn attention(params: &ModelParams<f64>, config: &EncoderConfig, k: usize, u: &Rows) -> (Rows, Vec<Rows>) {
    let n = u.len();
    let s = config.dim / config.heads;
    let divisor = config.attn_scale.unwrap_or((s as f64).sqrt());
    let q = linear(u, param(params, &format!("layer{k}.attn.w_q")), None);
    let kk = linear(u, param(params, &format!("layer{k}.attn.w_k")), None);
    let v = linear(u, param(params, &format!("layer{k}.attn.w_v")), None);
    let mut merged = vec![vec![0.0; config.heads * s]; n];
    let mut alphas = Vec::new();
    for h in 0..config.heads {
        let cols = h * s..(h + 1) * s;
        let mut alpha = vec![vec![0.0; n]; n];
        for i in 0..n {
            let scores: Vec<f64> =
                (0..n).map(|j| cols.clone().map(|c| q[i][c] * kk[j][c]).sum::<f64>() / divisor).collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|x| (x - m).exp()).sum();
            for j in 0..n {
                alpha[i][j] = (scores[j] - m).exp() / z;
            }
            for c in cols.clone() {
                merged[i][c] = (0..n).map(|j| alpha[i][j] * v[j][c]).sum();
            }
        }
        alphas.push(alpha);
    }
    (linear(&merged, param(params, &format!("layer{k}.attn.w_o")), None), alphas)
}

fn feed_forward(params: &ModelParams<f64>, k: usize, y: &Rows) -> Rows {
    let b1 = param(params, &format!("layer{k}.ff.b1")).2;
    let b2 = param(params, &format!("layer{k}.ff.b2")).2;
    let h: Rows = linear(y, param(params, &format!("layer{k}.ff.w1")), Some(b1))
        .into_iter()
        .map(|r| r.into_iter().map(|x| x.max(0.0)).collect())
        .collect();
    linear(&h, param(params, &format!("layer{k}.ff.w2")), Some(b2))
}

/// Encodes one walk.
pub fn reference_encode(params: &ModelParams<f64>, walk: &[usize], features: &FeatureMatrix) -> ReferenceOutput {
    let config = params.config().clone();
    let d = config.dim;
    let mut u: Rows = walk
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let x = features.row(v).iter().map(|&f| f as f64);
            if config.use_positional {
                x.zip(position_code(i + 1, d)).map(|(a, b)| a + b).collect()
            } else {
                x.collect()
            }
        })
        .collect();
    let mut attention_out = Vec::new();
    let mut norms = Vec::new();
    let eps = config.ln_eps;
    for k in 0..config.layers {
        let mut y = u.clone();
        if config.use_att {
            let (att, alphas) = attention(params, &config, k, &u);
            y = layer_norm(
                &add(&u, &att),
                param(params, &format!("layer{k}.attn_norm.gamma")).2,
                param(params, &format!("layer{k}.attn_norm.beta")).2,
                eps,
            );
            norms.push(y.clone());
            attention_out.push(alphas);
        }
        if config.use_ff {
            let ff = feed_forward(params, k, &y);
            y = layer_norm(
                &add(&y, &ff),
                param(params, &format!("layer{k}.ff_norm.gamma")).2,
                param(params, &format!("layer{k}.ff_norm.beta")).2,
                eps,
            );
            norms.push(y.clone());
        }
        u = y;
    }
    ReferenceOutput { output: u, attention: attention_out, norms }
}

/// Mean over walks of `Σ_i Σ_{v' ∈ C_i} −log softmax(u_i · O_cᵀ)_{v'}` with the softmax taken
/// over `candidates`. `sets[w][i]` is the neighbour set of position `i` of walk `w`.
pub fn reference_loss(
    params: &ModelParams<f64>,
    walks: &[Vec<usize>],
    sets: &[Vec<NeighborSet>],
    features: &FeatureMatrix,
    candidates: &[usize],
) -> f64 {
    let o = params.output();
    let d = params.config().dim;
    let o_row = |v: usize| &o.as_slice()[v * d..(v + 1) * d];
    let mut total = 0.0;
    for (walk, walk_sets) in walks.iter().zip(sets) {
        let reps = reference_encode(params, walk, features).output;
        for (u, set) in reps.iter().zip(walk_sets) {
            let score = |v: usize| u.iter().zip(o_row(v)).map(|(a, b)| a * b).sum::<f64>();
            let scores: Vec<f64> = candidates.iter().map(|&c| score(c)).collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
            for &t in &set.members {
                assert!(candidates.contains(&t), "target {t} outside the candidate set");
                total += log_z - score(t);
            }
        }
    }
    total / walks.len() as f64
}
