//! Uniform random walks and neighbour sampling.
//!
//! Each walk `(root, index)` draws from its own stream `(seed, root, index)`, so generation can
//! run per root in parallel and still produce the same walk set as a sequential run.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::exec::Execution;
use crate::graph::Graph;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// A fixed-length node sequence; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Walk {
    pub nodes: Vec<usize>,
}

impl Walk {
    pub fn root(&self) -> usize {
        self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every consecutive pair is a sampling edge of `graph`.
    pub fn is_valid_in(&self, graph: &Graph) -> bool {
        self.nodes.iter().all(|&v| v < graph.num_nodes() && graph.is_present(v))
            && self.nodes.windows(2).all(|w| graph.is_adjacent(w[0], w[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkSet {
    pub walks: Vec<Walk>,
    pub walks_per_root: usize,
    pub length: usize,
    pub seed: u64,
}

/// One walk of `length` nodes from `root`, drawing uniformly among the current node's neighbours.
pub fn walk_from<R: Rng + ?Sized>(graph: &Graph, root: usize, length: usize, rng: &mut R) -> Walk {
    let mut nodes = Vec::with_capacity(length);
    let mut cur = root;
    nodes.push(cur);
    for _ in 1..length {
        cur = *graph.neighbors(cur).choose(rng).expect("present nodes always have at least a self-loop");
        nodes.push(cur);
    }
    Walk { nodes }
}

/// `walks_per_root` walks of `length` nodes rooted at every present node, ordered by
/// `(root, index)`.
pub fn sample_walks(
    graph: &Graph,
    walks_per_root: usize,
    length: usize,
    seed: u64,
    exec: Execution,
) -> Result<WalkSet> {
    if length == 0 || walks_per_root == 0 {
        return Err(Error::Config("walk length and walks per root must be at least 1".into()));
    }
    let roots = graph.present_nodes();
    if roots.is_empty() {
        return Err(Error::Insufficient("graph has no present nodes".into()));
    }
    let per_root = exec.map_slice(&roots, |&root| {
        (0..walks_per_root)
            .map(|i| {
                let mut r = rng::stream(seed, Stream::Walks, &[root as u64, i as u64]);
                walk_from(graph, root, length, &mut r)
            })
            .collect::<Vec<_>>()
    });
    Ok(WalkSet { walks: per_root.into_iter().flatten().collect(), walks_per_root, length, seed })
}

/// `C_v`: a multiset of `m` neighbours of `center`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSet {
    pub center: usize,
    pub members: Vec<usize>,
}

/// `m` uniform draws with replacement from the neighbours of `v`.
pub fn sample_neighbors<R: Rng + ?Sized>(graph: &Graph, v: usize, m: usize, rng: &mut R) -> Result<NeighborSet> {
    if v >= graph.num_nodes() {
        return Err(Error::NodeOutOfRange { id: v, num_nodes: graph.num_nodes() });
    }
    if !graph.is_present(v) {
        return Err(Error::AbsentNode(v));
    }
    let adj = graph.neighbors(v);
    let members = (0..m).map(|_| adj[rng.random_range(0..adj.len())]).collect();
    Ok(NeighborSet { center: v, members })
}

/// Writes one walk per line, node ids separated by spaces.
pub fn save_walks(walks: &WalkSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(walks.walks.len() * walks.length * 5);
    for w in &walks.walks {
        for (i, v) in w.nodes.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
