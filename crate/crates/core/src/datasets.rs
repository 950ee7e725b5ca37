//! Citation-network converters.
//!
//! Input is the common two-file layout: `<name>.content` rows `paper_id word_1 … word_V label` and
//! `<name>.cites` rows `cited_id citing_id`. Output, in the crate's own formats:
//!
//! - `edges.txt`: one line per distinct citation (citing → cited, dense ids); loaded as an
//!   undirected graph.
//! - `features.bow`: sparse bag-of-words rows.
//! - `labels.txt`, `id_map.txt`.
//!
//! Citations that mention a paper without a content row are dropped and counted.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::graph::{load_edge_list, load_id_map, load_labels, save_id_map, BagOfWords, Graph, IdMap, LabelMap};
use crate::{Error, Result};

pub const EDGES_FILE: &str = "edges.txt";
pub const FEATURES_FILE: &str = "features.bow";
pub const LABELS_FILE: &str = "labels.txt";
pub const ID_MAP_FILE: &str = "id_map.txt";

/// Published size of a benchmark dataset. `edges` counts citation records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: &'static str,
    pub nodes: usize,
    pub edges: usize,
    pub classes: usize,
    pub vocab: usize,
}

pub const CORA: DatasetStats = DatasetStats { name: "cora", nodes: 2708, edges: 5429, classes: 7, vocab: 1433 };
pub const CITESEER: DatasetStats = DatasetStats { name: "citeseer", nodes: 3327, edges: 4732, classes: 6, vocab: 3703 };
pub const PUBMED: DatasetStats = DatasetStats { name: "pubmed", nodes: 19717, edges: 44338, classes: 3, vocab: 500 };

/// Relative tolerance on node and edge counts; differences stem from dangling and duplicate
/// citations in public distributions.
pub const COUNT_TOLERANCE: f64 = 0.01;

pub fn known_dataset(name: &str) -> Option<DatasetStats> {
    [CORA, CITESEER, PUBMED].into_iter().find(|d| d.name.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub nodes: usize,
    pub vocab: usize,
    pub classes: usize,
    pub cite_rows: usize,
    /// Distinct directed citations kept.
    pub citations: usize,
    /// Undirected edges of the resulting graph.
    pub undirected_edges: usize,
    pub dangling_dropped: usize,
    pub self_citations_dropped: usize,
    pub duplicates_dropped: usize,
}

fn find_with_extension(dir: &Path, ext: &str) -> Result<PathBuf> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<PathBuf> =
        entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == ext)).collect();
    found.sort();
    match found.len() {
        1 => Ok(found.remove(0)),
        0 => Err(Error::Config(format!("no .{ext} file in {}", dir.display()))),
        _ => Err(Error::Config(format!("several .{ext} files in {}", dir.display()))),
    }
}

/// Converts `raw_dir` (one `.content` and one `.cites` file) into `out_dir`.
pub fn convert_citation_dataset(raw_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<ConversionReport> {
    let raw_dir = raw_dir.as_ref();
    let out_dir = out_dir.as_ref();
    let content_path = find_with_extension(raw_dir, "content")?;
    let cites_path = find_with_extension(raw_dir, "cites")?;

    let content = fs::read_to_string(&content_path).map_err(|e| Error::io(&content_path, e))?;
    let mut ids = IdMap::default();
    let mut rows = Vec::new();
    let mut label_names = Vec::new();
    let mut vocab = None;
    for (i, line) in content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::parse(&content_path, i + 1, "expected id, word indicators and label"));
        }
        let words = &toks[1..toks.len() - 1];
        match vocab {
            None => vocab = Some(words.len()),
            Some(v) if v != words.len() => {
                return Err(Error::parse(&content_path, i + 1, format!("{} word columns, expected {v}", words.len())))
            }
            _ => {}
        }
        if ids.get(toks[0]).is_some() {
            return Err(Error::parse(&content_path, i + 1, format!("duplicate node id {:?}", toks[0])));
        }
        ids.intern(toks[0]);
        let mut row = Vec::new();
        for (w, t) in words.iter().enumerate() {
            let c: f32 =
                t.parse().map_err(|_| Error::parse(&content_path, i + 1, format!("invalid word value {t:?}")))?;
            if c != 0.0 {
                row.push((w, c));
            }
        }
        rows.push(row);
        label_names.push(toks[toks.len() - 1].to_string());
    }
    let vocab = vocab.ok_or_else(|| Error::Insufficient(format!("{} has no rows", content_path.display())))?;

    let cites = fs::read_to_string(&cites_path).map_err(|e| Error::io(&cites_path, e))?;
    let mut seen = HashSet::new();
    let mut citations = Vec::new();
    let (mut rows_read, mut dangling, mut self_cites, mut duplicates) = (0, 0, 0, 0);
    for (i, line) in cites.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::parse(&cites_path, i + 1, "expected cited_id citing_id"));
        }
        rows_read += 1;
        let (Some(cited), Some(citing)) = (ids.get(toks[0]), ids.get(toks[1])) else {
            dangling += 1;
            continue;
        };
        if cited == citing {
            self_cites += 1;
        } else if !seen.insert((citing, cited)) {
            duplicates += 1;
        } else {
            citations.push((citing, cited));
        }
    }

    let n = ids.len();
    let mut edges = format!("nodes={n}\n");
    for (u, v) in &citations {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let edges_path = out_dir.join(EDGES_FILE);
    fs::write(&edges_path, edges).map_err(|e| Error::io(&edges_path, e))?;
    BagOfWords { vocab_size: vocab, rows }.save(out_dir.join(FEATURES_FILE))?;
    let mut labels_text = String::new();
    for (v, l) in label_names.iter().enumerate() {
        let _ = writeln!(labels_text, "{v}\t{l}");
    }
    let labels_path = out_dir.join(LABELS_FILE);
    fs::write(&labels_path, labels_text).map_err(|e| Error::io(&labels_path, e))?;
    save_id_map(&ids, out_dir.join(ID_MAP_FILE))?;

    let graph = Graph::from_edges(n, citations.iter().copied())?;
    let classes = label_names.iter().collect::<HashSet<_>>().len();
    Ok(ConversionReport {
        nodes: n,
        vocab,
        classes,
        cite_rows: rows_read,
        citations: citations.len(),
        undirected_edges: graph.num_edges(),
        dangling_dropped: dangling,
        self_citations_dropped: self_cites,
        duplicates_dropped: duplicates,
    })
}

/// A converted dataset loaded back from disk.
#[derive(Debug, Clone)]
pub struct ConvertedDataset {
    pub graph: Graph,
    pub bow: BagOfWords,
    pub labels: LabelMap,
    pub ids: IdMap,
    /// Number of citation lines in the edge file.
    pub citations: usize,
}

pub fn load_converted(dir: impl AsRef<Path>) -> Result<ConvertedDataset> {
    let dir = dir.as_ref();
    let ids = load_id_map(dir.join(ID_MAP_FILE))?;
    let edges_path = dir.join(EDGES_FILE);
    let graph = load_edge_list(&edges_path)?;
    if graph.num_nodes() != ids.len() {
        return Err(Error::DimensionMismatch { expected: ids.len(), got: graph.num_nodes() });
    }
    let text = fs::read_to_string(&edges_path).map_err(|e| Error::io(&edges_path, e))?;
    let citations = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#') && !l.starts_with("nodes="))
        .count();
    let bow = BagOfWords::load(dir.join(FEATURES_FILE), ids.len())?;
    let labels = load_labels(dir.join(LABELS_FILE), ids.len())?;
    Ok(ConvertedDataset { graph, bow, labels, ids, citations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatCheck {
    pub field: String,
    pub expected: usize,
    pub found: usize,
    /// Allowed relative deviation (0 = exact).
    pub tolerance: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub dataset: String,
    pub checks: Vec<StatCheck>,
    /// Citation records per node.
    pub avg_neighbors: f64,
    pub undirected_edges: usize,
}

impl StatsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn render(&self) -> String {
        let mut s = format!("dataset {}\n", self.dataset);
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<8} expected {:>6} found {:>6} (±{:.0}%) {}",
                c.field,
                c.expected,
                c.found,
                100.0 * c.tolerance,
                if c.ok { "ok" } else { "MISMATCH" }
            );
        }
        let _ = writeln!(s, "avg neighbours per node {:.3}", self.avg_neighbors);
        let _ = writeln!(s, "undirected edges {}", self.undirected_edges);
        s
    }
}

fn check(field: &str, expected: usize, found: usize, tolerance: f64) -> StatCheck {
    let ok = (found as f64 - expected as f64).abs() <= tolerance * expected as f64;
    StatCheck { field: field.to_string(), expected, found, tolerance, ok }
}

/// Recounts nodes, citations, classes and vocabulary of a converted dataset against `expected`.
pub fn verify_stats(dir: impl AsRef<Path>, expected: &DatasetStats) -> Result<StatsReport> {
    let data = load_converted(dir)?;
    let nodes = data.ids.len();
    Ok(StatsReport {
        dataset: expected.name.to_string(),
        checks: vec![
            check("nodes", expected.nodes, nodes, COUNT_TOLERANCE),
            check("edges", expected.edges, data.citations, COUNT_TOLERANCE),
            check("classes", expected.classes, data.labels.num_classes(), 0.0),
            check("vocab", expected.vocab, data.bow.vocab_size, 0.0),
        ],
        avg_neighbors: data.citations as f64 / nodes.max(1) as f64,
        undirected_edges: data.graph.num_edges(),
    })
}
