use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use sanne::datasets::{self, ConvertedDataset};
use sanne::encoder::ModelParams;
use sanne::evaluator::{
    paired_ttest, run_protocol, training_graph, validation_accuracy, DatasetBundle, ProtocolResult, Setting,
};
use sanne::exec::Execution;
use sanne::graph::{load_features, load_split, make_splits_with, project_features, save_split, FeatureMatrix};
use sanne::infer::{infer_embeddings, output_embeddings, save_embeddings, Embeddings};
use sanne::trainer::{train as train_model, Checkpoint, EpochRecord};
use sanne::walks::{sample_walks, save_walks};

use crate::config::RunConfig;
use crate::RunArgs;

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const CHECKPOINT_FILE: &str = "checkpoint.sanne";
pub const HISTORY_FILE: &str = "history.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn execution(threads: Option<usize>) -> Execution {
    match threads {
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    }
}

/// Resolves the configuration, creates the output directory and echoes the config into it.
fn prepare(run: &RunArgs, command: &str) -> Result<(RunConfig, PathBuf)> {
    let config = run.resolve()?;
    let out = run.out_dir(command);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(RESOLVED_CONFIG), config.render())?;
    Ok((config, out))
}

fn load_dataset(config: &RunConfig) -> Result<ConvertedDataset> {
    let dir = config.data_dir()?;
    datasets::load_converted(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

/// Dense features from `features`, else the bag-of-words projected to `dim`.
fn load_input_features(config: &RunConfig, data: &ConvertedDataset, dim: usize) -> Result<FeatureMatrix> {
    let n = data.graph.num_nodes();
    Ok(match &config.features {
        Some(path) => load_features(path, dim, n).with_context(|| format!("loading features {}", path.display()))?,
        None => project_features(&data.bow, dim, config.projection_seed)?,
    })
}

fn ensure_finite(emb: &Embeddings) -> Result<()> {
    ensure!(emb.data.iter().all(|x| x.is_finite()), "embeddings contain non-finite values");
    Ok(())
}

fn history_tsv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch\tmean_loss\tvalidation\n");
    for r in history {
        let v = r.validation.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "{}\t{}\t{}", r.epoch, r.mean_loss, v);
    }
    s
}

pub fn convert(raw: &Path, out: &Path) -> Result<ExitCode> {
    let report = datasets::convert_citation_dataset(raw, out)?;
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(out.join("conversion.json"), &json)?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

pub fn stats(data: &Path, dataset: &str) -> Result<ExitCode> {
    let Some(expected) = datasets::known_dataset(dataset) else {
        bail!("unknown dataset {dataset:?} (expected cora, citeseer or pubmed)");
    };
    let report = datasets::verify_stats(data, &expected)?;
    print!("{}", report.render());
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn split(run: &RunArgs, _exec: Execution) -> Result<ExitCode> {
    let (config, out) = prepare(run, "split")?;
    let data = load_dataset(&config)?;
    let splits = make_splits_with(&data.graph, &data.labels, config.splits, config.seed, config.split_sizes())?;
    for (i, s) in splits.iter().enumerate() {
        save_split(s, out.join(format!("split_{i}.txt")))?;
    }
    eprintln!("wrote {} splits to {}", splits.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn walks(run: &RunArgs, split: Option<&Path>, exec: Execution) -> Result<ExitCode> {
    let (config, out) = prepare(run, "walks")?;
    let data = load_dataset(&config)?;
    let graph = match split {
        Some(p) => training_graph(&data.graph, &load_split(p)?, config.setting)?,
        None => data.graph.clone(),
    };
    let set = sample_walks(&graph, config.walks_per_root, config.encoder.walk_length, config.seed, exec)?;
    save_walks(&set, out.join("walks.txt"))?;
    eprintln!("wrote {} walks to {}", set.walks.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn train(run: &RunArgs, split: Option<&Path>, exec: Execution) -> Result<ExitCode> {
    let (config, out) = prepare(run, "train")?;
    let data = load_dataset(&config)?;
    let features = load_input_features(&config, &data, config.encoder.dim)?;
    let split = split.map(load_split).transpose()?;
    if config.setting == Setting::Inductive && split.is_none() {
        bail!("the inductive setting needs --split to know which nodes to hold out");
    }
    let (graph, removed) = match &split {
        Some(s) if config.setting == Setting::Inductive => {
            (training_graph(&data.graph, s, config.setting)?, s.test.clone())
        }
        _ => (data.graph.clone(), Vec::new()),
    };
    let train_config = config.train_config(exec);
    let labels = &data.labels;
    let mut validator = |p: &ModelParams<f32>| {
        let s = split.as_ref().expect("validator only used with a split");
        validation_accuracy(p, labels, s, &config.logreg)
    };
    let log = |r: &EpochRecord| match r.validation {
        Some(v) => eprintln!("epoch {:>3}  loss {:.5}  val {:.4}", r.epoch, r.mean_loss, v),
        None => eprintln!("epoch {:>3}  loss {:.5}", r.epoch, r.mean_loss),
    };
    let outcome = if split.is_some() {
        train_model(&graph, &features, &train_config, Some(&mut validator), log)?
    } else {
        train_model(&graph, &features, &train_config, None, log)?
    };
    fs::write(out.join(HISTORY_FILE), history_tsv(&outcome.history))?;

    let emb = output_embeddings(&outcome.params, &graph.present_nodes())?;
    ensure_finite(&emb)?;
    save_embeddings(&emb, Some(&data.ids), out.join(EMBEDDINGS_FILE))?;

    let mut ckpt = Checkpoint::new(outcome.params, &graph, removed);
    ckpt.id_map = Some((0..data.ids.len()).map(|i| data.ids.original(i).unwrap_or_default().to_string()).collect());
    let meta = &mut ckpt.metadata;
    meta.insert("setting".into(), config.setting.to_string());
    meta.insert("seed".into(), config.seed.to_string());
    meta.insert("best_epoch".into(), outcome.best_epoch.to_string());
    meta.insert("features".into(), config.value_of("features"));
    meta.insert("projection_seed".into(), config.projection_seed.to_string());
    ckpt.save(out.join(CHECKPOINT_FILE))?;
    eprintln!("best epoch {}; wrote {}", outcome.best_epoch, out.display());
    Ok(ExitCode::SUCCESS)
}

fn read_node_list(path: &Path, data: &ConvertedDataset) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|id| data.ids.get(id).with_context(|| format!("unknown node id {id:?} in {}", path.display())))
        .collect()
}

pub fn infer(run: &RunArgs, checkpoint: &Path, nodes: Option<&Path>, exec: Execution) -> Result<ExitCode> {
    let (config, out) = prepare(run, "infer")?;
    let data = load_dataset(&config)?;
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    ckpt.verify_graph(&data.graph)?;
    if config.features.is_none() {
        if let Some(seed) = ckpt.metadata.get("projection_seed") {
            ensure!(
                *seed == config.projection_seed.to_string(),
                "projection_seed = {} but the checkpoint was trained with {seed}",
                config.projection_seed
            );
        }
    }
    let features = load_input_features(&config, &data, ckpt.params.config().dim)?;
    let nodes = match nodes {
        Some(p) => read_node_list(p, &data)?,
        None if !ckpt.removed_nodes.is_empty() => ckpt.removed_nodes.clone(),
        None => bail!("the checkpoint holds out no nodes; pass --nodes"),
    };
    let emb = infer_embeddings(&ckpt.params, &data.graph, &features, &nodes, &config.infer_config(exec))?;
    ensure_finite(&emb)?;
    save_embeddings(&emb, Some(&data.ids), out.join(EMBEDDINGS_FILE))?;
    eprintln!("inferred {} embeddings into {}", emb.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(run: &RunArgs, exec: Execution) -> Result<ExitCode> {
    let (config, out) = prepare(run, "eval")?;
    let data = load_dataset(&config)?;
    let features = load_input_features(&config, &data, config.encoder.dim)?;
    let splits = make_splits_with(&data.graph, &data.labels, config.splits, config.seed, config.split_sizes())?;
    let split_dir = out.join("splits");
    fs::create_dir_all(&split_dir)?;
    for (i, s) in splits.iter().enumerate() {
        save_split(s, split_dir.join(format!("split_{i}.txt")))?;
    }
    let bundle = DatasetBundle { graph: data.graph, features, labels: data.labels };
    let result = run_protocol(&bundle, &splits, &config.protocol_config(exec), |i, r| {
        eprintln!(
            "split {i} epoch {:>3}  loss {:.5}  val {:.4}",
            r.epoch,
            r.mean_loss,
            r.validation.unwrap_or(f64::NAN)
        );
    })?;
    ensure!(
        result.mean_test_accuracy.is_finite() && result.std_test_accuracy.is_finite(),
        "protocol produced non-finite accuracies"
    );
    fs::write(out.join(REPORT_FILE), result.to_json())?;
    let summary = result.summary_table();
    fs::write(out.join(SUMMARY_FILE), &summary)?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn load_report(path: &Path) -> Result<ProtocolResult> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))
}

pub fn compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let (ra, rb) = (load_report(a)?, load_report(b)?);
    let t = paired_ttest(&ra.test_accuracies(), &rb.test_accuracies())?;
    let mut s = String::new();
    let _ = writeln!(s, "a: {} ({:.4} mean)", a.display(), ra.mean_test_accuracy);
    let _ = writeln!(s, "b: {} ({:.4} mean)", b.display(), rb.mean_test_accuracy);
    let _ = writeln!(s, "paired t = {}  dof = {}  p = {}", t.t, t.dof, t.p);
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        fs::write(out.join("compare.json"), serde_json::to_string_pretty(&t)?)?;
    }
    print!("{s}");
    Ok(ExitCode::SUCCESS)
}
