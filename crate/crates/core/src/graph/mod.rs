//! Graphs, node features, labels and data splits.
//!
//! Node ids are dense integers `0..num_nodes`. Graphs are undirected and immutable: each
//! undirected edge is stored in both endpoints' sorted adjacency lists. A node left with no
//! neighbours receives an implicit self-loop so that walks and neighbour sets always exist.
//! Nodes removed for the inductive setting are flagged absent and have empty adjacency.

mod features;
mod io;
mod split;

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

pub use features::{load_features, project_features, save_features, BagOfWords, FeatureMatrix};
pub use io::{load_edge_list, load_id_map, load_labels, save_edge_list, save_id_map, save_labels, IdMap};
pub use split::{
    load_split, make_splits, make_splits_with, save_split, Split, SplitSizes, SPLIT_TEST_SIZE, SPLIT_TRAIN_PER_CLASS,
    SPLIT_VALIDATION_SIZE,
};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    present: Vec<bool>,
    self_loop: Vec<bool>,
    num_edges: usize,
}

impl Graph {
    /// Builds an undirected graph. Duplicate edges and both orientations collapse to one edge;
    /// explicit self-loops are dropped.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); num_nodes];
        for (u, v) in edges {
            for id in [u, v] {
                if id >= num_nodes {
                    return Err(Error::NodeOutOfRange { id, num_nodes });
                }
            }
            if u == v {
                continue;
            }
            sets[u].insert(v);
            sets[v].insert(u);
        }
        let adjacency = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        Ok(Self::finish(adjacency, vec![true; num_nodes]))
    }

    fn finish(mut adjacency: Vec<Vec<usize>>, present: Vec<bool>) -> Self {
        let num_edges = adjacency.iter().map(Vec::len).sum::<usize>() / 2;
        let mut self_loop = vec![false; adjacency.len()];
        for (v, adj) in adjacency.iter_mut().enumerate() {
            if present[v] && adj.is_empty() {
                adj.push(v);
                self_loop[v] = true;
            }
        }
        Graph { adjacency, present, self_loop, num_edges }
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    /// Number of undirected edges, not counting injected self-loops.
    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Sampling neighbours of `v`: its sorted adjacency, or `[v]` if it is isolated.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        if self.self_loop[v] {
            0
        } else {
            self.adjacency[v].len()
        }
    }

    pub fn has_self_loop(&self, v: usize) -> bool {
        self.self_loop[v]
    }

    pub fn is_present(&self, v: usize) -> bool {
        self.present[v]
    }

    pub fn present_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&v| self.present[v]).collect()
    }

    pub fn num_present(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// Whether `u` is a sampling neighbour of `v` (includes the injected self-loop).
    pub fn is_adjacent(&self, v: usize, u: usize) -> bool {
        self.adjacency[v].binary_search(&u).is_ok()
    }

    /// Undirected edges `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, adj)| adj.iter().copied().filter(move |&v| u < v).map(move |v| (u, v)))
    }

    /// Deletes every edge incident to `removed` and flags those nodes absent. Surviving nodes
    /// left without neighbours get the isolated-node self-loop.
    pub fn remove_nodes(&self, removed: &[usize]) -> Result<Graph> {
        let n = self.num_nodes();
        let mut present = self.present.clone();
        for &id in removed {
            if id >= n {
                return Err(Error::NodeOutOfRange { id, num_nodes: n });
            }
            present[id] = false;
        }
        let adjacency = (0..n)
            .map(|v| {
                if !present[v] || self.self_loop[v] {
                    return Vec::new();
                }
                self.adjacency[v].iter().copied().filter(|&u| present[u]).collect()
            })
            .collect();
        Ok(Self::finish(adjacency, present))
    }

    /// Content hash over the node count, presence flags and edge set.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_nodes() as u64).to_le_bytes());
        for &p in &self.present {
            h.update([p as u8]);
        }
        for (u, v) in self.edges() {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
        h.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

/// Class label per node. Unlabelled nodes hold `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    labels: Vec<Option<usize>>,
    class_names: Vec<String>,
}

impl LabelMap {
    pub fn new(labels: Vec<Option<usize>>, class_names: Vec<String>) -> Result<Self> {
        for l in labels.iter().flatten() {
            if *l >= class_names.len() {
                return Err(Error::Config(format!("class index {l} outside [0, {})", class_names.len())));
            }
        }
        Ok(LabelMap { labels, class_names })
    }

    /// Labels given directly as dense class indices; class names are the indices themselves.
    pub fn from_indices(labels: &[usize]) -> Self {
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        LabelMap {
            labels: labels.iter().map(|&l| Some(l)).collect(),
            class_names: (0..num_classes).map(|c| c.to_string()).collect(),
        }
    }

    pub fn get(&self, v: usize) -> Option<usize> {
        self.labels.get(v).copied().flatten()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Labelled nodes of class `c`, ascending.
    pub fn nodes_of_class(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&v| self.labels[v] == Some(c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn symmetric(g: &Graph) -> bool {
        (0..g.num_nodes()).all(|v| g.neighbors(v).iter().all(|&u| g.is_adjacent(u, v)))
    }

    #[test]
    fn duplicate_orientations_collapse() {
        let g = Graph::from_edges(2, [(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn isolated_nodes_get_self_loop() {
        let g = Graph::from_edges(3, [(0, 1)]).unwrap();
        assert_eq!(g.neighbors(2), &[2]);
        assert!(g.has_self_loop(2));
        assert_eq!(g.degree(2), 0);
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        assert!(matches!(Graph::from_edges(2, [(0, 2)]), Err(Error::NodeOutOfRange { id: 2, num_nodes: 2 })));
    }

    #[test]
    fn remove_nothing_is_identity() {
        let g = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(g.remove_nodes(&[]).unwrap(), g);
    }

    #[test]
    fn removing_all_neighbors_isolates_survivor() {
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (2, 3)]).unwrap();
        let r = g.remove_nodes(&[1, 2]).unwrap();
        assert_eq!(r.neighbors(0), &[0]);
        assert!(r.has_self_loop(0));
        assert!(!r.is_present(1));
        assert!(r.neighbors(1).is_empty());
        assert_eq!(r.present_nodes(), vec![0, 3]);
        assert_eq!(r.num_edges(), 0);
    }

    #[test]
    fn remove_out_of_range() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        assert!(g.remove_nodes(&[5]).is_err());
    }

    #[test]
    fn fingerprint_tracks_structure() {
        let a = Graph::from_edges(3, [(0, 1)]).unwrap();
        let b = Graph::from_edges(3, [(1, 2)]).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), a.remove_nodes(&[2]).unwrap().fingerprint());
    }

    fn arb_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..20).prop_flat_map(|n| (Just(n), proptest::collection::vec((0..n, 0..n), 0..60)))
    }

    proptest! {
        #[test]
        fn construction_is_symmetric_and_sorted((n, edges) in arb_graph()) {
            let g = Graph::from_edges(n, edges).unwrap();
            prop_assert!(symmetric(&g));
            for v in 0..n {
                let adj = g.neighbors(v);
                prop_assert!(adj.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(!adj.is_empty());
                if adj.contains(&v) {
                    prop_assert!(g.has_self_loop(v));
                }
            }
        }

        #[test]
        fn removal_preserves_surviving_edges((n, edges) in arb_graph(), mask in proptest::collection::vec(any::<bool>(), 20)) {
            let g = Graph::from_edges(n, edges).unwrap();
            let removed: Vec<usize> = (0..n).filter(|&v| mask[v]).collect();
            let r = g.remove_nodes(&removed).unwrap();
            prop_assert!(symmetric(&r));
            let expected: Vec<_> = g.edges().filter(|&(u, v)| !mask[u] && !mask[v]).collect();
            let got: Vec<_> = r.edges().collect();
            prop_assert_eq!(expected, got);
            for &v in &removed {
                prop_assert!(r.neighbors(v).is_empty());
            }
        }
    }
}
