//! The walk transformer.
//!
//! A walk of `N` nodes becomes an `N × d` matrix of input features (plus sinusoidal position
//! vectors when enabled). `K` layers then apply, per position,
//!
//! ```text
//! y  = LayerNorm(u + Att(u))
//! u' = LayerNorm(y + FF(y))
//! ```
//!
//! where `Att` is bidirectional multi-head scaled-dot-product attention across the walk and
//! `FF(y) = W2 relu(W1 y + b1) + b2`. Either sub-layer can be switched off for ablations, in which
//! case the remaining one is applied directly to `u`.
//!
//! Batches of walks are stacked row-wise (`B·N × d`); attention is computed block-diagonally so
//! walks never attend to each other.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::FeatureMatrix;
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::rng::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Feature / embedding dimension `d`.
    pub dim: usize,
    /// Number of stacked layers `K`.
    pub layers: usize,
    /// Attention heads `H`; the per-head size is `d / H`.
    pub heads: usize,
    pub ff_hidden: usize,
    /// Walk length `N`.
    pub walk_length: usize,
    pub use_positional: bool,
    pub use_ff: bool,
    pub use_att: bool,
    /// Divisor applied to attention scores; `None` means `sqrt(d / H)`.
    pub attn_scale: Option<f64>,
    pub ln_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 128,
            layers: 2,
            heads: 8,
            ff_hidden: 1024,
            walk_length: 8,
            use_positional: true,
            use_ff: true,
            use_att: true,
            attn_scale: None,
            ln_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    pub fn score_divisor(&self) -> f64 {
        self.attn_scale.unwrap_or_else(|| (self.head_dim() as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ff_hidden", self.ff_hidden),
            ("walk_length", self.walk_length),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("H must divide d (heads = {}, dim = {})", self.heads, self.dim)));
        }
        if !self.use_att && !self.use_ff {
            return Err(Error::Config("at least one of use_att / use_ff must be enabled".into()));
        }
        if self.use_positional && !self.dim.is_multiple_of(2) {
            return Err(Error::Config("positional encoding needs an even dimension".into()));
        }
        if let Some(s) = self.attn_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config("attn_scale must be positive".into()));
            }
        }
        if self.ln_eps.is_nan() || self.ln_eps < 0.0 {
            return Err(Error::Config("ln_eps must be non-negative".into()));
        }
        Ok(())
    }
}

/// Sinusoidal position vectors for positions `1..=n`:
/// `t[i][2j] = sin(i / 10000^(2j/d))`, `t[i][2j+1] = cos(i / 10000^(2j/d))`.
pub fn positional_encoding<T: Real>(n: usize, d: usize) -> Result<Tensor<T>> {
    if !d.is_multiple_of(2) {
        return Err(Error::Config(format!("positional encoding needs an even dimension, got {d}")));
    }
    let mut data = Vec::with_capacity(n * d);
    for i in 1..=n {
        for j in 0..d / 2 {
            let angle = i as f64 / 10000f64.powf(2.0 * j as f64 / d as f64);
            data.push(T::from_f64_lossy(angle.sin()));
            data.push(T::from_f64_lossy(angle.cos()));
        }
    }
    Tensor::matrix(n, d, data)
}

/// Indices of one layer's tensors within [`ModelParams::tensors`].
#[derive(Debug, Clone, Copy)]
struct LayerSlots {
    /// `w_q, w_k, w_v, w_o, gamma, beta`
    attn: Option<[usize; 6]>,
    /// `w1, b1, w2, b2, gamma, beta`
    ff: Option<[usize; 6]>,
}

#[derive(Debug, Clone)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Glorot,
    Zeros,
    Ones,
    Output,
}

fn layout(config: &EncoderConfig, num_nodes: usize) -> (Vec<TensorSpec>, Vec<LayerSlots>, usize) {
    let d = config.dim;
    let f = config.ff_hidden;
    let hs = config.heads * config.head_dim();
    let mut specs = Vec::new();
    let mut slots = Vec::new();
    let push = |specs: &mut Vec<TensorSpec>, name: String, shape: Vec<usize>, init| {
        specs.push(TensorSpec { name, shape, init });
        specs.len() - 1
    };
    for k in 0..config.layers {
        let attn = config.use_att.then(|| {
            [
                push(&mut specs, format!("layer{k}.attn.w_q"), vec![hs, d], Init::Glorot),
                push(&mut specs, format!("layer{k}.attn.w_k"), vec![hs, d], Init::Glorot),
                push(&mut specs, format!("layer{k}.attn.w_v"), vec![hs, d], Init::Glorot),
                push(&mut specs, format!("layer{k}.attn.w_o"), vec![d, hs], Init::Glorot),
                push(&mut specs, format!("layer{k}.attn_norm.gamma"), vec![d], Init::Ones),
                push(&mut specs, format!("layer{k}.attn_norm.beta"), vec![d], Init::Zeros),
            ]
        });
        let ff = config.use_ff.then(|| {
            [
                push(&mut specs, format!("layer{k}.ff.w1"), vec![f, d], Init::Glorot),
                push(&mut specs, format!("layer{k}.ff.b1"), vec![f], Init::Zeros),
                push(&mut specs, format!("layer{k}.ff.w2"), vec![d, f], Init::Glorot),
                push(&mut specs, format!("layer{k}.ff.b2"), vec![d], Init::Zeros),
                push(&mut specs, format!("layer{k}.ff_norm.gamma"), vec![d], Init::Ones),
                push(&mut specs, format!("layer{k}.ff_norm.beta"), vec![d], Init::Zeros),
            ]
        });
        slots.push(LayerSlots { attn, ff });
    }
    let output = push(&mut specs, "output".to_string(), vec![num_nodes, d], Init::Output);
    (specs, slots, output)
}

/// All trainable tensors: per-layer attention / feed-forward / layer-norm weights and the output
/// node-embedding matrix `O` (`num_nodes × d`).
///
/// The query, key and value matrices of a layer are stored stacked: rows `h*s..(h+1)*s` of
/// `w_q` form head `h`'s `s × d` projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: EncoderConfig,
    num_nodes: usize,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Scaled-uniform weights `±sqrt(6 / (fan_in + fan_out))`, zero biases, unit layer-norm gains,
    /// and `O` uniform in `±0.5 / d`. Each tensor draws from its own seeded stream.
    pub fn init(config: &EncoderConfig, num_nodes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_nodes == 0 {
            return Err(Error::Config("num_nodes must be at least 1".into()));
        }
        let (specs, _, _) = layout(config, num_nodes);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let numel: usize = spec.shape.iter().product();
            let mut r = rng::stream(seed, Stream::Init, &[i as u64]);
            let mut uniform = |bound: f64| -> Vec<T> {
                (0..numel).map(|_| T::from_f64_lossy(r.random_range(-bound..=bound))).collect()
            };
            let data = match spec.init {
                Init::Glorot => uniform((6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt()),
                Init::Output => uniform(0.5 / config.dim as f64),
                Init::Zeros => vec![T::zero(); numel],
                Init::Ones => vec![T::one(); numel],
            };
            tensors.push(Tensor::new(spec.shape, data)?);
            names.push(spec.name);
        }
        Ok(ModelParams { config: config.clone(), num_nodes, names, tensors })
    }

    /// Rebuilds parameters from named tensors (e.g. a checkpoint). Every expected tensor must be
    /// present with the expected shape.
    pub fn from_named(config: &EncoderConfig, num_nodes: usize, mut named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let (specs, _, _) = layout(config, num_nodes);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in specs {
            let pos = named
                .iter()
                .position(|(n, _)| *n == spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", spec.name)))?;
            let (name, t) = named.swap_remove(pos);
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::ShapeMismatch { op: "load_params", left: spec.shape, right: t.shape().to_vec() });
            }
            names.push(name);
            tensors.push(t);
        }
        if let Some((extra, _)) = named.first() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(ModelParams { config: config.clone(), num_nodes, names, tensors })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Tensors in a fixed order matching [`ModelParams::names`].
    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    /// Index of the output embedding matrix `O` in [`ModelParams::tensors`].
    pub fn output_index(&self) -> usize {
        self.tensors.len() - 1
    }

    /// The output embedding matrix `O`.
    pub fn output(&self) -> &Tensor<T> {
        &self.tensors[self.output_index()]
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            num_nodes: self.num_nodes,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records every encoder tensor on `tape` (as parameters when `trainable`). `O` is not bound;
    /// losses bind the rows they need.
    pub fn bind_encoder(&self, tape: &mut Tape<T>, trainable: bool) -> Result<EncoderVars> {
        let n = self.output_index();
        let vars = self.tensors[..n]
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderVars::new(&self.config, vars))
    }
}

/// Tape handles for the encoder tensors of a [`ModelParams`], in the same order.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    vars: Vec<Var>,
    slots: Vec<LayerSlots>,
}

impl EncoderVars {
    /// Wraps handles given in [`ModelParams::tensors`] order (without `O`).
    pub fn new(config: &EncoderConfig, vars: Vec<Var>) -> Self {
        let (_, slots, _) = layout(config, 0);
        EncoderVars { vars, slots }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Output of [`encode_batch`].
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    /// `B·N × d` final-layer representations, walk-major.
    pub output: Var,
    /// Attention weights per layer and head, each `B·N × N` (row `b·N + i` holds α for position `i`
    /// of walk `b`). Empty when attention is disabled.
    pub attention: Vec<Vec<Var>>,
}

/// Input representations `x_v (+ t_i)` for a batch of walks, stacked row-wise.
pub fn walk_inputs<T: Real>(
    config: &EncoderConfig,
    walks: &[&[usize]],
    features: &FeatureMatrix,
    positional: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let d = config.dim;
    if features.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: features.dim() });
    }
    let n = config.walk_length;
    let mut data = Vec::with_capacity(walks.len() * n * d);
    for walk in walks {
        if walk.len() != n {
            return Err(Error::ShapeMismatch { op: "encode", left: vec![n], right: vec![walk.len()] });
        }
        for (i, &v) in walk.iter().enumerate() {
            let row = features.try_row(v)?;
            match positional {
                Some(t) => data.extend(row.iter().zip(t.row(i)).map(|(&x, &p)| T::from_f64_lossy(x as f64) + p)),
                None => data.extend(row.iter().map(|&x| T::from_f64_lossy(x as f64))),
            }
        }
    }
    Tensor::matrix(walks.len() * n, d, data)
}

fn attention<T: Real>(
    tape: &mut Tape<T>,
    config: &EncoderConfig,
    vars: &[Var],
    slots: [usize; 6],
    u: Var,
    alphas: &mut Vec<Var>,
) -> Result<Var> {
    let n = config.walk_length;
    let s = config.head_dim();
    let inv = T::from_f64_lossy(1.0 / config.score_divisor());
    let q = tape.matmul_nt(u, vars[slots[0]])?;
    let k = tape.matmul_nt(u, vars[slots[1]])?;
    let v = tape.matmul_nt(u, vars[slots[2]])?;
    let mut heads = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let qh = tape.slice_cols(q, h * s, s)?;
        let kh = tape.slice_cols(k, h * s, s)?;
        let vh = tape.slice_cols(v, h * s, s)?;
        let scores = tape.block_matmul_nt(qh, kh, n)?;
        let scores = tape.scale(scores, inv)?;
        let alpha = tape.softmax_rows(scores)?;
        alphas.push(alpha);
        heads.push(tape.block_matmul(alpha, vh, n)?);
    }
    let merged = tape.concat_cols(&heads)?;
    tape.matmul_nt(merged, vars[slots[3]])
}

fn feed_forward<T: Real>(tape: &mut Tape<T>, vars: &[Var], slots: [usize; 6], y: Var) -> Result<Var> {
    let h = tape.matmul_nt(y, vars[slots[0]])?;
    let h = tape.add_bias(h, vars[slots[1]])?;
    let h = tape.relu(h)?;
    let o = tape.matmul_nt(h, vars[slots[2]])?;
    tape.add_bias(o, vars[slots[3]])
}

/// Runs the layer stack over walk inputs already placed on the tape (`B·N × d`).
pub fn encode_inputs<T: Real>(
    tape: &mut Tape<T>,
    config: &EncoderConfig,
    params: &EncoderVars,
    inputs: Var,
) -> Result<EncodedBatch> {
    let eps = T::from_f64_lossy(config.ln_eps);
    let vars = &params.vars;
    let mut u = inputs;
    let mut attention_weights = Vec::with_capacity(config.layers);
    for slots in &params.slots {
        let mut alphas = Vec::new();
        let mut y = u;
        if let Some(a) = slots.attn {
            let att = attention(tape, config, vars, a, u, &mut alphas)?;
            let r = tape.add(u, att)?;
            y = tape.layer_norm(r, vars[a[4]], vars[a[5]], eps)?;
        }
        if let Some(f) = slots.ff {
            let ff = feed_forward(tape, vars, f, y)?;
            let r = tape.add(y, ff)?;
            y = tape.layer_norm(r, vars[f[4]], vars[f[5]], eps)?;
        }
        u = y;
        if !alphas.is_empty() {
            attention_weights.push(alphas);
        }
    }
    Ok(EncodedBatch { output: u, attention: attention_weights })
}

/// Encodes a batch of walks on `tape`.
pub fn encode_batch<T: Real>(
    tape: &mut Tape<T>,
    config: &EncoderConfig,
    params: &EncoderVars,
    walks: &[&[usize]],
    features: &FeatureMatrix,
    positional: Option<&Tensor<T>>,
) -> Result<EncodedBatch> {
    let x = walk_inputs(config, walks, features, positional)?;
    let x = tape.constant(x)?;
    encode_inputs(tape, config, params, x)
}

/// Precomputed positional table for a config, or `None` when positions are disabled.
pub fn positional_for<T: Real>(config: &EncoderConfig) -> Result<Option<Tensor<T>>> {
    if config.use_positional {
        positional_encoding(config.walk_length, config.dim).map(Some)
    } else {
        Ok(None)
    }
}

/// Final-layer representations of one walk (`N × d`), without recording gradients.
pub fn encode_walk<T: Real>(params: &ModelParams<T>, walk: &[usize], features: &FeatureMatrix) -> Result<Tensor<T>> {
    let config = params.config();
    let mut tape = Tape::new();
    let vars = params.bind_encoder(&mut tape, false)?;
    let pos = positional_for::<T>(config)?;
    let out = encode_batch(&mut tape, config, &vars, &[walk], features, pos.as_ref())?;
    Ok(tape.value(out.output).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> EncoderConfig {
        EncoderConfig {
            dim: 4,
            layers: 2,
            heads: 2,
            ff_hidden: 6,
            walk_length: 3,
            use_positional: true,
            ..EncoderConfig::default()
        }
    }

    fn toy_features(n: usize, d: usize) -> FeatureMatrix {
        FeatureMatrix::new(d, (0..n * d).map(|i| ((i as f32) * 0.731).sin()).collect()).unwrap()
    }

    #[test]
    fn head_dimension_and_divisibility() {
        let c = EncoderConfig { dim: 128, heads: 8, ..EncoderConfig::default() };
        assert_eq!(c.head_dim(), 16);
        c.validate().unwrap();
        let bad = EncoderConfig { dim: 128, heads: 3, ..EncoderConfig::default() };
        let err = ModelParams::<f32>::init(&bad, 10, 0).unwrap_err().to_string();
        assert!(err.contains("H must divide d"), "{err}");
        let none = EncoderConfig { use_att: false, use_ff: false, ..EncoderConfig::default() };
        assert!(none.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let c = toy_config();
        let a = ModelParams::<f32>::init(&c, 6, 3).unwrap();
        let b = ModelParams::<f32>::init(&c, 6, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ModelParams::<f32>::init(&c, 6, 4).unwrap());
        assert_eq!(a.output().shape(), &[6, 4]);
        assert_eq!(a.tensor("layer0.attn.w_q").unwrap().shape(), &[4, 4]);
        assert_eq!(a.tensor("layer1.ff.w1").unwrap().shape(), &[6, 4]);
        assert!(a.tensor("layer1.ff_norm.gamma").unwrap().as_slice().iter().all(|&g| g == 1.0));
        assert!(a.tensor("layer1.ff.b2").unwrap().as_slice().iter().all(|&b| b == 0.0));
        assert!(a.output().as_slice().iter().all(|&o| o.abs() <= 0.5 / 4.0));
        let bound = (6.0f32 / 8.0).sqrt();
        assert!(a.tensor("layer0.attn.w_k").unwrap().as_slice().iter().all(|&w| w.abs() <= bound));
    }

    #[test]
    fn ablations_drop_sublayer_tensors() {
        let c = EncoderConfig { use_ff: false, ..toy_config() };
        let p = ModelParams::<f32>::init(&c, 6, 0).unwrap();
        assert!(p.tensor("layer0.ff.w1").is_none());
        assert!(p.tensor("layer0.attn.w_q").is_some());
        let c = EncoderConfig { use_att: false, ..toy_config() };
        let p = ModelParams::<f32>::init(&c, 6, 0).unwrap();
        assert!(p.tensor("layer0.attn.w_q").is_none());
    }

    #[test]
    fn positional_values() {
        let t = positional_encoding::<f64>(8, 128).unwrap();
        assert_eq!(t.shape(), &[8, 128]);
        assert!((t.get(0, 0) - 0.841_470_984_807_896_5).abs() < 1e-12);
        assert!((t.get(0, 1) - 0.540_302_305_868_139_8).abs() < 1e-12);
        assert!(t.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(positional_encoding::<f64>(8, 7).is_err());
    }

    #[test]
    fn attention_rows_are_distributions() {
        let c = toy_config();
        let p = ModelParams::<f64>::init(&c, 6, 1).unwrap();
        let f = toy_features(6, 4);
        let mut tape = Tape::new();
        let vars = p.bind_encoder(&mut tape, false).unwrap();
        let pos = positional_for::<f64>(&c).unwrap();
        let walks: Vec<&[usize]> = vec![&[0, 1, 2], &[3, 3, 5]];
        let out = encode_batch(&mut tape, &c, &vars, &walks, &f, pos.as_ref()).unwrap();
        assert_eq!(out.attention.len(), 2);
        for layer in &out.attention {
            assert_eq!(layer.len(), 2);
            for &a in layer {
                let t = tape.value(a);
                assert_eq!(t.shape(), &[6, 3]);
                for r in 0..6 {
                    let s: f64 = t.row(r).iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                    assert!(t.row(r).iter().all(|&x| x >= 0.0));
                }
            }
        }
        assert_eq!(tape.value(out.output).shape(), &[6, 4]);
    }

    #[test]
    fn batching_matches_single_walks() {
        let c = toy_config();
        let p = ModelParams::<f64>::init(&c, 6, 2).unwrap();
        let f = toy_features(6, 4);
        let w1 = [0usize, 1, 2];
        let w2 = [4usize, 2, 4];
        let single1 = encode_walk(&p, &w1, &f).unwrap();
        let single2 = encode_walk(&p, &w2, &f).unwrap();
        let mut tape = Tape::new();
        let vars = p.bind_encoder(&mut tape, false).unwrap();
        let pos = positional_for::<f64>(&c).unwrap();
        let out = encode_batch(&mut tape, &c, &vars, &[&w1, &w2], &f, pos.as_ref()).unwrap();
        let both = tape.value(out.output);
        for i in 0..3 {
            for j in 0..4 {
                assert!((both.get(i, j) - single1.get(i, j)).abs() < 1e-12);
                assert!((both.get(3 + i, j) - single2.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_feature_row_and_wrong_length() {
        let c = toy_config();
        let p = ModelParams::<f32>::init(&c, 6, 2).unwrap();
        let f = toy_features(3, 4);
        assert!(matches!(encode_walk(&p, &[0, 1, 5], &f), Err(Error::MissingRow { id: 5, .. })));
        assert!(encode_walk(&p, &[0, 1], &f).is_err());
        let wrong_dim = toy_features(6, 6);
        assert!(matches!(encode_walk(&p, &[0, 1, 2], &wrong_dim), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn named_round_trip() {
        let c = toy_config();
        let p = ModelParams::<f32>::init(&c, 6, 2).unwrap();
        let named: Vec<_> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).rev().collect();
        assert_eq!(ModelParams::from_named(&c, 6, named).unwrap(), p);
        let mut short: Vec<_> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect();
        short.pop();
        assert!(ModelParams::from_named(&c, 6, short).is_err());
    }
}
