use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::logreg::{accuracy, select_logreg, EmbeddingTable, LogRegConfig};
use crate::encoder::ModelParams;
use crate::graph::{FeatureMatrix, Graph, LabelMap, Split};
use crate::infer::{infer_embeddings, output_embeddings, InferConfig};
use crate::rng::{derive_seed, Stream};
use crate::trainer::{train, EpochRecord, TrainConfig, TrainOutcome};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// All nodes take part in training; every embedding is a row of `O`.
    Transductive,
    /// Test nodes are removed before training and embedded afterwards by walk inference.
    Inductive,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Transductive => "transductive",
            Setting::Inductive => "inductive",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transductive" => Ok(Setting::Transductive),
            "inductive" => Ok(Setting::Inductive),
            _ => Err(Error::Config(format!("setting must be transductive or inductive, got {s:?}"))),
        }
    }
}

/// Graph, input features and labels of one dataset.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub setting: Setting,
    /// Master seed; each split derives its own training and inference seeds from it.
    pub seed: u64,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub logreg: LogRegConfig,
}

impl ProtocolConfig {
    /// Short content hash of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn for_split(&self, index: usize) -> (TrainConfig, InferConfig) {
        let train =
            TrainConfig { seed: derive_seed(self.seed, Stream::Protocol, &[index as u64, 0]), ..self.train.clone() };
        let infer = InferConfig { seed: derive_seed(self.seed, Stream::Protocol, &[index as u64, 1]), ..self.infer };
        (train, infer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub split: usize,
    /// Epoch of the selected embedding model (1-based; 0 when no epoch ran).
    pub best_epoch: usize,
    /// Validation accuracy that selected the embedding model.
    pub selection_accuracy: Option<f64>,
    /// L2 strength and epoch of the final classifier.
    pub lambda: f64,
    pub classifier_epoch: usize,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub setting: Setting,
    pub config_hash: String,
    pub splits: Vec<SplitResult>,
    pub mean_test_accuracy: f64,
    /// Population standard deviation of the test accuracies.
    pub std_test_accuracy: f64,
}

impl ProtocolResult {
    pub fn test_accuracies(&self) -> Vec<f64> {
        self.splits.iter().map(|s| s.test_accuracy).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "setting: {}  config: {}", self.setting, self.config_hash);
        let _ = writeln!(
            s,
            "{:>5}  {:>10}  {:>8}  {:>9}  {:>8}  {:>8}",
            "split", "best_epoch", "lambda", "clf_epoch", "val_acc", "test_acc"
        );
        for r in &self.splits {
            let _ = writeln!(
                s,
                "{:>5}  {:>10}  {:>8.0e}  {:>9}  {:>8.4}  {:>8.4}",
                r.split, r.best_epoch, r.lambda, r.classifier_epoch, r.validation_accuracy, r.test_accuracy
            );
        }
        let _ = writeln!(
            s,
            "test accuracy: {:.2} ± {:.2} (%)",
            100.0 * self.mean_test_accuracy,
            100.0 * self.std_test_accuracy
        );
        s
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// The graph the model trains on for a split: test nodes removed in the inductive setting.
pub fn training_graph(graph: &Graph, split: &Split, setting: Setting) -> Result<Graph> {
    match setting {
        Setting::Transductive => Ok(graph.clone()),
        Setting::Inductive => graph.remove_nodes(&split.test),
    }
}

/// Validation accuracy of a logistic-regression classifier on the current `O` rows.
pub fn validation_accuracy(
    params: &ModelParams<f32>,
    labels: &LabelMap,
    split: &Split,
    logreg: &LogRegConfig,
) -> Result<f64> {
    let nodes: Vec<usize> = split.train.iter().chain(&split.validation).copied().collect();
    let table = EmbeddingTable::from_sources(&[&output_embeddings(params, &nodes)?])?;
    Ok(select_logreg(&table, labels, &split.train, &split.validation, logreg)?.validation_accuracy)
}

/// Embeddings for every split node: `O` rows for training and validation nodes, and for test
/// nodes either `O` rows (transductive) or inferred embeddings (inductive).
pub fn split_embeddings(
    params: &ModelParams<f32>,
    bundle: &DatasetBundle,
    split: &Split,
    setting: Setting,
    infer: &InferConfig,
) -> Result<EmbeddingTable> {
    let seen: Vec<usize> = split.train.iter().chain(&split.validation).copied().collect();
    let o = output_embeddings(params, &seen)?;
    let test = match setting {
        Setting::Transductive => output_embeddings(params, &split.test)?,
        Setting::Inductive => infer_embeddings(params, &bundle.graph, &bundle.features, &split.test, infer)?,
    };
    EmbeddingTable::from_sources(&[&o, &test])
}

/// Trains and evaluates on one split. Returns the per-split record and the training outcome.
pub fn run_split(
    bundle: &DatasetBundle,
    split: &Split,
    index: usize,
    config: &ProtocolConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(SplitResult, TrainOutcome)> {
    let (train_config, infer_config) = config.for_split(index);
    let graph = training_graph(&bundle.graph, split, config.setting)?;
    let mut validator = |p: &ModelParams<f32>| validation_accuracy(p, &bundle.labels, split, &config.logreg);
    let outcome = train(&graph, &bundle.features, &train_config, Some(&mut validator), &mut on_epoch)?;
    let table = split_embeddings(&outcome.params, bundle, split, config.setting, &infer_config)?;
    let fit = select_logreg(&table, &bundle.labels, &split.train, &split.validation, &config.logreg)?;
    let test_accuracy = accuracy(&fit.classifier, &table, &bundle.labels, &split.test)?;
    let result = SplitResult {
        split: index,
        best_epoch: outcome.best_epoch,
        selection_accuracy: outcome.best_validation,
        lambda: fit.classifier.lambda,
        classifier_epoch: fit.best_epoch,
        validation_accuracy: fit.validation_accuracy,
        test_accuracy,
        history: outcome.history.clone(),
    };
    Ok((result, outcome))
}

/// Runs every split in order and aggregates test accuracy.
pub fn run_protocol(
    bundle: &DatasetBundle,
    splits: &[Split],
    config: &ProtocolConfig,
    mut on_epoch: impl FnMut(usize, &EpochRecord),
) -> Result<ProtocolResult> {
    if splits.is_empty() {
        return Err(Error::Insufficient("the protocol needs at least one split".into()));
    }
    let mut results = Vec::with_capacity(splits.len());
    for (i, split) in splits.iter().enumerate() {
        let (r, _) = run_split(bundle, split, i, config, |e| on_epoch(i, e))?;
        results.push(r);
    }
    let accs: Vec<f64> = results.iter().map(|r| r.test_accuracy).collect();
    let (mean, std) = mean_std(&accs);
    Ok(ProtocolResult {
        setting: config.setting,
        config_hash: config.hash(),
        splits: results,
        mean_test_accuracy: mean,
        std_test_accuracy: std,
    })
}
