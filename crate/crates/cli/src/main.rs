mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "sanne", version, about = "Self-attention node embeddings over random walks")]
struct Cli {
    /// Worker threads; 1 runs every loop sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads a run configuration.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `$SANNE_OUT/<command>` or `./sanne-out/<command>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "SANNE_OUT", hide_env_values = true)]
    out_root: Option<PathBuf>,
    /// Converted dataset directory.
    #[arg(long)]
    data: Option<String>,
    /// Dense `node<TAB>f_1..f_d` feature file; omitted means a seeded projection of the bag-of-words.
    #[arg(long)]
    features: Option<String>,
    /// `transductive` or `inductive`.
    #[arg(long)]
    setting: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<String>,
    /// Number of random splits.
    #[arg(long)]
    splits: Option<String>,
    /// Embedding dimension.
    #[arg(long, visible_alias = "dim")]
    d: Option<String>,
    /// Encoder layers K.
    #[arg(long)]
    layers: Option<String>,
    /// Attention heads H; must divide d.
    #[arg(long)]
    heads: Option<String>,
    /// Maximum training epochs.
    #[arg(long)]
    epochs: Option<String>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<String>,
    /// Keep the feed-forward sublayer (`true`/`false`).
    #[arg(long)]
    use_ff: Option<String>,
    /// Keep the attention sublayer (`true`/`false`).
    #[arg(long)]
    use_att: Option<String>,
    /// Any other key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        let flags = [
            ("data", &self.data),
            ("features", &self.features),
            ("setting", &self.setting),
            ("seed", &self.seed),
            ("splits", &self.splits),
            ("dim", &self.d),
            ("layers", &self.layers),
            ("heads", &self.heads),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("use_ff", &self.use_ff),
            ("use_att", &self.use_att),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                c.set(k, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects key=value, got {kv:?}"))?;
            c.set(k.trim(), v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn out_dir(&self, command: &str) -> PathBuf {
        match (&self.out, &self.out_root) {
            (Some(out), _) => out.clone(),
            (None, Some(root)) => root.join(command),
            (None, None) => PathBuf::from("sanne-out").join(command),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a raw content/cites dataset into edges, bag-of-words, labels and id map.
    Convert {
        /// Directory holding `<name>.content` and `<name>.cites`.
        #[arg(long)]
        raw: PathBuf,
        /// Directory for the converted files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a converted dataset with the published counts; exits non-zero on mismatch.
    Stats {
        /// Converted dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// cora, citeseer or pubmed.
        #[arg(long)]
        dataset: String,
    },
    /// Write `splits` train/validation/test splits.
    Split(RunArgs),
    /// Sample one epoch of training walks.
    Walks {
        #[command(flatten)]
        run: RunArgs,
        /// Split file; with the inductive setting its test nodes are removed first.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Train a model, write checkpoint, loss history and training-node embeddings.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Split file; enables validation model selection and the inductive setting.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Infer embeddings from a checkpoint for the nodes it has not seen.
    Infer {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// File with one node id per line (default: the checkpoint's removed nodes).
        #[arg(long)]
        nodes: Option<PathBuf>,
    },
    /// Run the multi-split classification protocol and write report.json.
    Eval(RunArgs),
    /// Paired t-test between the per-split test accuracies of two reports.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the worker pool")?;
    }
    let exec = commands::execution(cli.threads);
    match cli.command {
        Command::Convert { raw, out } => commands::convert(&raw, &out),
        Command::Stats { data, dataset } => commands::stats(&data, &dataset),
        Command::Split(run) => commands::split(&run, exec),
        Command::Walks { run, split } => commands::walks(&run, split.as_deref(), exec),
        Command::Train { run, split } => commands::train(&run, split.as_deref(), exec),
        Command::Infer { run, checkpoint, nodes } => commands::infer(&run, &checkpoint, nodes.as_deref(), exec),
        Command::Eval(run) => commands::eval(&run, exec),
        Command::Compare { a, b, out } => commands::compare(&a, &b, out.as_deref()),
    }
}
