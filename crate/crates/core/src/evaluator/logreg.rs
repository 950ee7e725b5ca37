use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::graph::LabelMap;
use crate::infer::Embeddings;
use crate::numerics::gemm;
use crate::{Error, Result};

/// Node id → embedding row, gathered from one or more [`Embeddings`].
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    rows: HashMap<usize, Vec<f64>>,
}

impl EmbeddingTable {
    /// Later sources override earlier ones for repeated nodes.
    pub fn from_sources(sources: &[&Embeddings]) -> Result<Self> {
        let mut t = EmbeddingTable::default();
        for e in sources {
            for (i, &v) in e.nodes.iter().enumerate() {
                t.insert(v, e.row(i).iter().map(|&x| x as f64).collect())?;
            }
        }
        Ok(t)
    }

    pub fn insert(&mut self, v: usize, row: Vec<f64>) -> Result<()> {
        if self.rows.is_empty() {
            self.dim = row.len();
        } else if row.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: row.len() });
        }
        self.rows.insert(v, row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, v: usize) -> Result<&[f64]> {
        self.rows.get(&v).map(Vec::as_slice).ok_or(Error::MissingRow { what: "embedding", id: v })
    }

    /// Stacked rows of `ids` (`|ids| × dim`).
    fn matrix(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &v in ids {
            out.extend_from_slice(self.get(v)?);
        }
        Ok(out)
    }
}

/// Multinomial logistic regression: `scores = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub num_classes: usize,
    pub dim: usize,
    /// `num_classes × dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub lambda: f64,
}

impl Classifier {
    pub fn zeros(num_classes: usize, dim: usize, lambda: f64) -> Self {
        Classifier { num_classes, dim, weights: vec![0.0; num_classes * dim], bias: vec![0.0; num_classes], lambda }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let w = &self.weights[c * self.dim..(c + 1) * self.dim];
                self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Scores for many rows at once (`n × num_classes`).
    fn score_matrix(&self, x: &[f64], n: usize) -> Vec<f64> {
        let c = self.num_classes;
        let mut s = vec![0.0; n * c];
        gemm(n, self.dim, c, x, false, &self.weights, true, &mut s, false);
        for row in s.chunks_exact_mut(c) {
            row.iter_mut().zip(&self.bias).for_each(|(a, b)| *a += b);
        }
        s
    }
}

fn argmax(s: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in s.iter().enumerate().skip(1) {
        if v > s[best] {
            best = i;
        }
    }
    best
}

fn labels_of(labels: &LabelMap, ids: &[usize]) -> Result<Vec<usize>> {
    ids.iter().map(|&v| labels.get(v).ok_or(Error::MissingRow { what: "label", id: v })).collect()
}

/// Fraction of `ids` whose predicted class equals their label.
pub fn accuracy(clf: &Classifier, table: &EmbeddingTable, labels: &LabelMap, ids: &[usize]) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::Insufficient("accuracy over an empty id set".into()));
    }
    let y = labels_of(labels, ids)?;
    let x = table.matrix(ids)?;
    Ok(matrix_accuracy(clf, &x, &y))
}

fn matrix_accuracy(clf: &Classifier, x: &[f64], y: &[usize]) -> f64 {
    let s = clf.score_matrix(x, y.len());
    let correct = s.chunks_exact(clf.num_classes).zip(y).filter(|(row, &label)| argmax(row) == label).count();
    correct as f64 / y.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub lr: f64,
    pub epochs: usize,
    /// L2 strengths tried; the best on validation wins (earliest on ties).
    pub lambdas: Vec<f64>,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig { lr: 0.1, epochs: 1000, lambdas: vec![1e-4, 1e-3, 1e-2] }
    }
}

/// A trained classifier with its selection trace.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegFit {
    /// Parameters after the best validation epoch.
    pub classifier: Classifier,
    /// 1-based.
    pub best_epoch: usize,
    pub validation_accuracy: f64,
    /// Validation accuracy after each epoch.
    pub validation_trace: Vec<f64>,
    /// Training objective `mean CE + λ/2 ‖W‖²` before each epoch's update.
    pub objective_trace: Vec<f64>,
}

/// Full-batch gradient descent on mean cross-entropy plus `(λ/2)‖W‖²` (bias unregularised).
///
/// The penalty is applied as a proximal step, `W ← (W − lr·∇CE) / (1 + lr·λ)`, which has the same
/// minimiser as plain gradient descent but stays stable for any `λ ≥ 0`. Parameters start at zero.
pub fn train_logreg(
    table: &EmbeddingTable,
    labels: &LabelMap,
    train_ids: &[usize],
    val_ids: &[usize],
    lambda: f64,
    epochs: usize,
    lr: f64,
) -> Result<LogRegFit> {
    if train_ids.is_empty() {
        return Err(Error::Insufficient("logistic regression needs at least one training node".into()));
    }
    if val_ids.is_empty() {
        return Err(Error::Insufficient("logistic regression needs validation nodes".into()));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Config(format!("l2 strength must be non-negative, got {lambda}")));
    }
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    let d = table.dim();
    let c = labels.num_classes();
    let n = train_ids.len();
    let x = table.matrix(train_ids)?;
    let y = labels_of(labels, train_ids)?;
    let xv = table.matrix(val_ids)?;
    let yv = labels_of(labels, val_ids)?;

    let mut clf = Classifier::zeros(c, d, lambda);
    let mut best: Option<(f64, usize, Classifier)> = None;
    let mut validation_trace = Vec::with_capacity(epochs);
    let mut objective_trace = Vec::with_capacity(epochs);
    let mut g = vec![0.0; n * c];
    let mut grad_w = vec![0.0; c * d];
    let shrink = 1.0 / (1.0 + lr * lambda);
    for epoch in 1..=epochs {
        let s = clf.score_matrix(&x, n);
        let mut ce = 0.0;
        for ((row, gr), &label) in s.chunks_exact(c).zip(g.chunks_exact_mut(c)).zip(&y) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            ce += m + z.ln() - row[label];
            for (k, (gk, &v)) in gr.iter_mut().zip(row).enumerate() {
                *gk = ((v - m).exp() / z - if k == label { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        let norm2: f64 = clf.weights.iter().map(|w| w * w).sum();
        objective_trace.push(ce / n as f64 + 0.5 * lambda * norm2);

        // grad_W = Gᵀ X
        gemm(c, n, d, &g, true, &x, false, &mut grad_w, false);
        for (w, gw) in clf.weights.iter_mut().zip(&grad_w) {
            *w = (*w - lr * gw) * shrink;
        }
        for (k, b) in clf.bias.iter_mut().enumerate() {
            *b -= lr * g.iter().skip(k).step_by(c).sum::<f64>();
        }
        if clf.weights.iter().chain(&clf.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logistic regression weights at epoch {epoch}")));
        }
        let acc = matrix_accuracy(&clf, &xv, &yv);
        validation_trace.push(acc);
        if best.as_ref().is_none_or(|(a, _, _)| acc > *a) {
            best = Some((acc, epoch, clf.clone()));
        }
    }
    let (validation_accuracy, best_epoch, classifier) = match best {
        Some(b) => b,
        None => (matrix_accuracy(&clf, &xv, &yv), 0, clf),
    };
    Ok(LogRegFit { classifier, best_epoch, validation_accuracy, validation_trace, objective_trace })
}

/// Trains one classifier per λ in the grid and keeps the best on validation.
pub fn select_logreg(
    table: &EmbeddingTable,
    labels: &LabelMap,
    train_ids: &[usize],
    val_ids: &[usize],
    config: &LogRegConfig,
) -> Result<LogRegFit> {
    let mut best: Option<LogRegFit> = None;
    for &lambda in &config.lambdas {
        let fit = train_logreg(table, labels, train_ids, val_ids, lambda, config.epochs, config.lr)?;
        if best.as_ref().is_none_or(|b| fit.validation_accuracy > b.validation_accuracy) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::Config("empty l2 strength grid".into()))
}
