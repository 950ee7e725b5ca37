//! Flat `key = value` run configuration.
//!
//! Values come from built-in defaults, then an optional config file, then command-line flags.
//! Unknown keys and malformed values are rejected with the key named in the message.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sanne::encoder::EncoderConfig;
use sanne::evaluator::{LogRegConfig, ProtocolConfig, Setting};
use sanne::exec::Execution;
use sanne::graph::SplitSizes;
use sanne::infer::InferConfig;
use sanne::trainer::{AdamConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// Dense feature file; when unset the bag-of-words is randomly projected to `dim`.
    pub features: Option<PathBuf>,
    pub projection_seed: u64,
    pub setting: Setting,
    pub seed: u64,
    pub splits: usize,
    pub train_per_class: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub encoder: EncoderConfig,
    pub walks_per_root: usize,
    pub neighbors: usize,
    pub candidates: usize,
    pub batch_size: usize,
    pub micro_batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub infer_walks: usize,
    pub logreg: LogRegConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SplitSizes::default();
        RunConfig {
            data: None,
            features: None,
            projection_seed: 0,
            setting: Setting::Transductive,
            seed: 0,
            splits: 10,
            train_per_class: s.train_per_class,
            validation_size: s.validation,
            test_size: s.test,
            encoder: t.encoder,
            walks_per_root: t.walks_per_root,
            neighbors: t.neighbors,
            candidates: t.candidates,
            batch_size: t.batch_size,
            micro_batch: t.micro_batch,
            epochs: t.max_epochs,
            lr: t.adam.lr,
            infer_walks: InferConfig::default().walks,
            logreg: LogRegConfig::default(),
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "data",
    "features",
    "projection_seed",
    "setting",
    "seed",
    "splits",
    "train_per_class",
    "validation_size",
    "test_size",
    "dim",
    "layers",
    "heads",
    "ff_hidden",
    "walk_length",
    "use_positional",
    "use_ff",
    "use_att",
    "attn_scale",
    "ln_eps",
    "walks_per_root",
    "neighbors",
    "candidates",
    "batch_size",
    "micro_batch",
    "epochs",
    "lr",
    "infer_walks",
    "logreg_lr",
    "logreg_epochs",
    "logreg_lambdas",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| anyhow::anyhow!("invalid value {value:?} for key `{key}`"))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data" => self.data = Some(PathBuf::from(v)),
            "features" => self.features = (!v.is_empty() && v != "projection").then(|| PathBuf::from(v)),
            "projection_seed" => self.projection_seed = parse(key, v)?,
            "setting" => self.setting = v.parse().with_context(|| format!("key `{key}`"))?,
            "seed" => self.seed = parse(key, v)?,
            "splits" => self.splits = parse(key, v)?,
            "train_per_class" => self.train_per_class = parse(key, v)?,
            "validation_size" => self.validation_size = parse(key, v)?,
            "test_size" => self.test_size = parse(key, v)?,
            "dim" | "d" => self.encoder.dim = parse(key, v)?,
            "layers" => self.encoder.layers = parse(key, v)?,
            "heads" => self.encoder.heads = parse(key, v)?,
            "ff_hidden" => self.encoder.ff_hidden = parse(key, v)?,
            "walk_length" => self.encoder.walk_length = parse(key, v)?,
            "use_positional" => self.encoder.use_positional = parse(key, v)?,
            "use_ff" => self.encoder.use_ff = parse(key, v)?,
            "use_att" => self.encoder.use_att = parse(key, v)?,
            "attn_scale" => {
                self.encoder.attn_scale = match v {
                    "" | "none" | "auto" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "ln_eps" => self.encoder.ln_eps = parse(key, v)?,
            "walks_per_root" => self.walks_per_root = parse(key, v)?,
            "neighbors" => self.neighbors = parse(key, v)?,
            "candidates" => self.candidates = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "micro_batch" => self.micro_batch = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "infer_walks" => self.infer_walks = parse(key, v)?,
            "logreg_lr" => self.logreg.lr = parse(key, v)?,
            "logreg_epochs" => self.logreg.epochs = parse(key, v)?,
            "logreg_lambdas" => {
                self.logreg.lambdas = v.split(',').map(|x| parse(key, x.trim())).collect::<Result<_>>()?
            }
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("{origin}:{}: expected `key = value`", i + 1);
            };
            self.set(k.trim(), v).with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn value_of(&self, key: &str) -> String {
        let e = &self.encoder;
        match key {
            "data" => self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "features" => {
                self.features.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "projection".into())
            }
            "projection_seed" => self.projection_seed.to_string(),
            "setting" => self.setting.to_string(),
            "seed" => self.seed.to_string(),
            "splits" => self.splits.to_string(),
            "train_per_class" => self.train_per_class.to_string(),
            "validation_size" => self.validation_size.to_string(),
            "test_size" => self.test_size.to_string(),
            "dim" => e.dim.to_string(),
            "layers" => e.layers.to_string(),
            "heads" => e.heads.to_string(),
            "ff_hidden" => e.ff_hidden.to_string(),
            "walk_length" => e.walk_length.to_string(),
            "use_positional" => e.use_positional.to_string(),
            "use_ff" => e.use_ff.to_string(),
            "use_att" => e.use_att.to_string(),
            "attn_scale" => e.attn_scale.map(|s| format!("{s:?}")).unwrap_or_else(|| "none".into()),
            "ln_eps" => format!("{:?}", e.ln_eps),
            "walks_per_root" => self.walks_per_root.to_string(),
            "neighbors" => self.neighbors.to_string(),
            "candidates" => self.candidates.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "micro_batch" => self.micro_batch.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => format!("{:?}", self.lr),
            "infer_walks" => self.infer_walks.to_string(),
            "logreg_lr" => format!("{:?}", self.logreg.lr),
            "logreg_epochs" => self.logreg.epochs.to_string(),
            "logreg_lambdas" => self.logreg.lambdas.iter().map(|l| format!("{l:?}")).collect::<Vec<_>>().join(","),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// The fully resolved configuration as `key = value` lines.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.value_of(k));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config(Execution::Sequential).validate()?;
        if self.infer_walks == 0 {
            bail!("infer_walks must be at least 1");
        }
        if self.splits == 0 {
            bail!("splits must be at least 1");
        }
        if self.logreg.lambdas.is_empty() {
            bail!("logreg_lambdas must list at least one value");
        }
        Ok(())
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| anyhow::anyhow!("no dataset given: set `data` in the config or pass --data"))
    }

    pub fn split_sizes(&self) -> SplitSizes {
        SplitSizes { train_per_class: self.train_per_class, validation: self.validation_size, test: self.test_size }
    }

    pub fn train_config(&self, execution: Execution) -> TrainConfig {
        TrainConfig {
            encoder: self.encoder.clone(),
            walks_per_root: self.walks_per_root,
            neighbors: self.neighbors,
            candidates: self.candidates,
            batch_size: self.batch_size,
            micro_batch: self.micro_batch,
            max_epochs: self.epochs,
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
            seed: self.seed,
            execution,
        }
    }

    pub fn infer_config(&self, execution: Execution) -> InferConfig {
        InferConfig { walks: self.infer_walks, seed: self.seed, execution }
    }

    pub fn protocol_config(&self, execution: Execution) -> ProtocolConfig {
        ProtocolConfig {
            setting: self.setting,
            seed: self.seed,
            train: self.train_config(execution),
            infer: self.infer_config(execution),
            logreg: self.logreg.clone(),
        }
    }
}
