use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Graph, LabelMap};
use crate::{Error, Result};

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Meaningful lines with their 1-based line numbers; `#` comments and blank lines are skipped.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn parse_node_id(tok: &str, path: &Path, line: usize) -> Result<usize> {
    if tok.starts_with('-') {
        return Err(Error::parse(path, line, format!("negative node id {tok:?}")));
    }
    tok.parse::<usize>().map_err(|_| Error::parse(path, line, format!("invalid node id {tok:?}")))
}

/// Reads `src<TAB>dst` lines (any whitespace accepted). An optional first content line
/// `nodes=<count>` fixes the node count; otherwise it is `max id + 1`.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut declared = None;
    let mut edges = Vec::new();
    for (idx, (line_no, line)) in content_lines(&text).enumerate() {
        if let Some(rest) = line.strip_prefix("nodes=") {
            if idx != 0 {
                return Err(Error::parse(path, line_no, "nodes= header must come first"));
            }
            let n = rest
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(path, line_no, format!("invalid node count {rest:?}")))?;
            declared = Some(n);
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::parse(path, line_no, format!("expected two node ids, got {}", toks.len())));
        }
        let u = parse_node_id(toks[0], path, line_no)?;
        let v = parse_node_id(toks[1], path, line_no)?;
        edges.push((u, v));
    }
    let inferred = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
    let num_nodes = match declared {
        Some(n) if n < inferred => {
            return Err(Error::NodeOutOfRange { id: inferred - 1, num_nodes: n });
        }
        Some(n) => n,
        None => inferred,
    };
    Graph::from_edges(num_nodes, edges)
}

/// Writes the graph with a `nodes=` header, one undirected edge per line.
pub fn save_edge_list(graph: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("nodes={}\n", graph.num_nodes());
    for (u, v) in graph.edges() {
        let _ = writeln!(out, "{u}\t{v}");
    }
    write_string(path.as_ref(), &out)
}

/// Reads `node_id<TAB>class_string` lines. Class indices follow first-seen order.
pub fn load_labels(path: impl AsRef<Path>, num_nodes: usize) -> Result<LabelMap> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut labels = vec![None; num_nodes];
    let mut classes: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line_no, line) in content_lines(&text) {
        let mut parts = line.splitn(2, '\t');
        let id_tok = parts.next().unwrap_or_default();
        let class = parts
            .next()
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| Error::parse(path, line_no, "expected node_id<TAB>class"))?;
        let id = parse_node_id(id_tok.trim(), path, line_no)?;
        if id >= num_nodes {
            return Err(Error::NodeOutOfRange { id, num_nodes });
        }
        let next = classes.len();
        let c = *index.entry(class.to_string()).or_insert_with(|| {
            classes.push(class.to_string());
            next
        });
        if labels[id].replace(c).is_some() {
            return Err(Error::parse(path, line_no, format!("duplicate label for node {id}")));
        }
    }
    LabelMap::new(labels, classes)
}

pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for v in 0..labels.num_nodes() {
        if let Some(c) = labels.get(v) {
            let _ = writeln!(out, "{v}\t{}", labels.class_names()[c]);
        }
    }
    write_string(path.as_ref(), &out)
}

/// Dense index ↔ original string id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    originals: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    /// Returns the dense id for `original`, assigning the next one if unseen.
    pub fn intern(&mut self, original: &str) -> usize {
        if let Some(&i) = self.index.get(original) {
            return i;
        }
        let i = self.originals.len();
        self.originals.push(original.to_string());
        self.index.insert(original.to_string(), i);
        i
    }

    pub fn get(&self, original: &str) -> Option<usize> {
        self.index.get(original).copied()
    }

    pub fn original(&self, id: usize) -> Option<&str> {
        self.originals.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }
}

/// Writes `index<TAB>original_id` lines.
pub fn save_id_map(map: &IdMap, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (i, o) in map.originals.iter().enumerate() {
        let _ = writeln!(out, "{i}\t{o}");
    }
    write_string(path.as_ref(), &out)
}

pub fn load_id_map(path: impl AsRef<Path>) -> Result<IdMap> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut map = IdMap::default();
    for (line_no, line) in content_lines(&text) {
        let (idx, orig) =
            line.split_once('\t').ok_or_else(|| Error::parse(path, line_no, "expected index<TAB>original"))?;
        let idx = parse_node_id(idx, path, line_no)?;
        if idx != map.len() || map.get(orig).is_some() {
            return Err(Error::parse(path, line_no, "id map must be dense and unique"));
        }
        map.intern(orig);
    }
    Ok(map)
}
