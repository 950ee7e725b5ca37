use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sanne::encoder::EncoderConfig;
use sanne::exec::Execution;
use sanne::graph::load_split;
use sanne::infer::load_embeddings;
use sanne::trainer::{initial_params, Checkpoint, TrainConfig};
use sanne_testkit::graphs::{two_cluster, write_raw_citation};
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--d",
    "8",
    "--heads",
    "2",
    "--layers",
    "1",
    "--epochs",
    "2",
    "--seed",
    "3",
    "--set",
    "ff_hidden=16",
    "--set",
    "candidates=30",
    "--set",
    "train_per_class=5",
    "--set",
    "validation_size=10",
    "--set",
    "test_size=10",
];

fn sanne(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sanne")).args(args).env("SANNE_OUT", out_root).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A converted two-cluster dataset inside a fresh temporary directory.
fn dataset() -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    std::fs::create_dir_all(&raw).unwrap();
    let b = two_cluster(8, 0);
    write_raw_citation(&raw, "clusters", &b.graph, &b.labels, 12, 1);
    let data = tmp.path().join("data");
    ok(&sanne(&["convert", "--raw", raw.to_str().unwrap(), "--out", data.to_str().unwrap()], tmp.path()));
    (tmp, data)
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run(args: &[String], root: &Path) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    sanne(&refs, root)
}

#[test]
fn heads_must_divide_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sanne(&["train", "--d", "128", "--heads", "3", "--data", "unused"], tmp.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("H must divide d"), "{}", stderr(&out));
}

#[test]
fn unknown_config_keys_are_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "dim = 16\nwalk_lenght = 8\n").unwrap();
    let out = sanne(&["split", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("walk_lenght"), "{}", stderr(&out));
    let out = sanne(&["split", "--set", "bogus=1"], tmp.path());
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}

#[test]
fn resolved_config_lands_in_default_output_root() {
    let (tmp, data) = dataset();
    let root = tmp.path().join("outputs");
    ok(&run(&with(&["split", "--data", data.to_str().unwrap(), "--splits", "2"], SMALL), &root));
    let resolved = std::fs::read_to_string(root.join("split/config.resolved")).unwrap();
    assert!(resolved.contains("dim = 8\n") && resolved.contains("walk_length = 8\n"), "{resolved}");
    let split = load_split(root.join("split/split_1.txt")).unwrap();
    assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (10, 10, 10));
}

#[test]
fn inductive_train_then_infer() {
    let (tmp, data) = dataset();
    let d = data.to_str().unwrap();
    ok(&run(&with(&["split", "--data", d, "--splits", "1"], SMALL), tmp.path()));
    let split_path = tmp.path().join("split/split_0.txt");
    let split = load_split(&split_path).unwrap();
    ok(&run(
        &with(&["train", "--data", d, "--setting", "inductive", "--split", split_path.to_str().unwrap()], SMALL),
        tmp.path(),
    ));
    let train_dir = tmp.path().join("train");
    let ckpt = Checkpoint::load(train_dir.join("checkpoint.sanne")).unwrap();
    assert_eq!(ckpt.removed_nodes, split.test);

    let graph = two_cluster(8, 0).graph.remove_nodes(&split.test).unwrap();
    let config = TrainConfig {
        encoder: EncoderConfig { dim: 8, heads: 2, layers: 1, ff_hidden: 16, ..EncoderConfig::default() },
        candidates: 30,
        max_epochs: 2,
        seed: 3,
        execution: Execution::Sequential,
        ..TrainConfig::default()
    };
    let init = initial_params(&graph, &config).unwrap();
    for &v in &split.test {
        assert_eq!(ckpt.params.output().row(v), init.output().row(v));
    }
    let history = std::fs::read_to_string(train_dir.join("history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    ok(&run(
        &with(&["infer", "--data", d, "--checkpoint", train_dir.join("checkpoint.sanne").to_str().unwrap()], SMALL),
        tmp.path(),
    ));
    let text = std::fs::read_to_string(tmp.path().join("infer/embeddings.tsv")).unwrap();
    assert_eq!(text.lines().count(), split.test.len());
    let first: Vec<&str> = text.lines().next().unwrap().split('\t').collect();
    assert_eq!(first[0], (100 + split.test[0]).to_string());
    assert_eq!(first.len(), 9);
}

#[test]
fn infer_rejects_a_different_graph() {
    let (tmp, data) = dataset();
    let d = data.to_str().unwrap();
    ok(&run(&with(&["train", "--data", d], SMALL), tmp.path()));
    let other = tmp.path().join("other");
    std::fs::create_dir_all(other.join("raw")).unwrap();
    let b = two_cluster(8, 0);
    let g = b.graph.remove_nodes(&[4]).unwrap();
    write_raw_citation(&other.join("raw"), "x", &g, &b.labels, 12, 1);
    let od = other.join("data");
    ok(&sanne(&["convert", "--raw", other.join("raw").to_str().unwrap(), "--out", od.to_str().unwrap()], tmp.path()));
    let nodes = tmp.path().join("nodes.txt");
    std::fs::write(&nodes, "100\n").unwrap();
    let ckpt = tmp.path().join("train/checkpoint.sanne");
    let out = run(
        &with(
            &[
                "infer",
                "--data",
                od.to_str().unwrap(),
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--nodes",
                nodes.to_str().unwrap(),
            ],
            SMALL,
        ),
        tmp.path(),
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("fingerprint"), "{}", stderr(&out));
}

#[test]
fn walks_are_written() {
    let (tmp, data) = dataset();
    ok(&run(&with(&["walks", "--data", data.to_str().unwrap(), "--set", "walks_per_root=3"], SMALL), tmp.path()));
    let text = std::fs::read_to_string(tmp.path().join("walks/walks.txt")).unwrap();
    let walks: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(walks.len(), 120);
    assert!(walks.iter().all(|w| w.split_whitespace().count() == 8));
}

#[test]
fn eval_then_compare() {
    let (tmp, data) = dataset();
    let d = data.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&run(
        &with(&["--threads", "1", "eval", "--data", d, "--splits", "3", "--out", a.to_str().unwrap()], SMALL),
        tmp.path(),
    ));
    ok(&run(
        &with(&["eval", "--data", d, "--splits", "3", "--use-att", "false", "--out", b.to_str().unwrap()], SMALL),
        tmp.path(),
    ));
    let summary = std::fs::read_to_string(a.join("summary.txt")).unwrap();
    assert!(summary.contains("test accuracy"));
    let out = sanne(
        &["compare", a.join("report.json").to_str().unwrap(), a.join("report.json").to_str().unwrap()],
        tmp.path(),
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("p = 1"));
    let out = sanne(
        &[
            "compare",
            a.join("report.json").to_str().unwrap(),
            b.join("report.json").to_str().unwrap(),
            "--out",
            tmp.path().join("cmp").to_str().unwrap(),
        ],
        tmp.path(),
    );
    // three splits of a saturated task may give identical or constant differences
    if out.status.success() {
        assert!(tmp.path().join("cmp/compare.json").exists());
    } else {
        assert!(stderr(&out).contains("undefined"), "{}", stderr(&out));
    }
}

#[test]
fn stats_reports_mismatch_for_unknown_counts() {
    let (tmp, data) = dataset();
    let out = sanne(&["stats", "--data", data.to_str().unwrap(), "--dataset", "cora"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("MISMATCH"));
}

#[test]
fn train_embeddings_use_original_ids() {
    let (tmp, data) = dataset();
    ok(&run(&with(&["train", "--data", data.to_str().unwrap()], SMALL), tmp.path()));
    let text = std::fs::read_to_string(tmp.path().join("train/embeddings.tsv")).unwrap();
    let ids: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids.len(), 40);
    assert_eq!(ids[0], "100");
    // numeric ids 100.. also parse with the plain loader
    assert_eq!(load_embeddings(tmp.path().join("train/embeddings.tsv")).unwrap().dim, 8);
}
