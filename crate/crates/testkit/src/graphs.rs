//! Small synthetic graphs and dataset writers.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sanne::evaluator::DatasetBundle;
use sanne::graph::{FeatureMatrix, Graph, LabelMap};

/// Six nodes: two triangles `{0,1,2}` and `{3,4,5}` joined by `2–3` and `1–4`.
pub fn toy_graph() -> Graph {
    Graph::from_edges(6, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (2, 3), (1, 4)]).unwrap()
}

/// Uniform `[-1, 1)` features.
pub fn random_features(num_nodes: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMatrix::new(dim, (0..num_nodes * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

pub const CLUSTER_SIZE: usize = 20;

/// Two 20-node cliques joined by the single edge `0–20`, labelled by clique, with random features.
pub fn two_cluster(dim: usize, seed: u64) -> DatasetBundle {
    let n = CLUSTER_SIZE;
    let mut edges = Vec::new();
    for c in 0..2 {
        for i in 0..n {
            for j in i + 1..n {
                edges.push((c * n + i, c * n + j));
            }
        }
    }
    edges.push((0, n));
    let labels: Vec<usize> = (0..2 * n).map(|v| v / n).collect();
    DatasetBundle {
        graph: Graph::from_edges(2 * n, edges).unwrap(),
        features: random_features(2 * n, dim, seed),
        labels: LabelMap::from_indices(&labels),
    }
}

/// Erdős–Rényi graph with edge probability `p`.
pub fn random_graph(num_nodes: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..num_nodes {
        for j in i + 1..num_nodes {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(num_nodes, edges).unwrap()
}

/// Writes `<name>.content` / `<name>.cites` for `graph` with random binary word vectors.
/// Paper ids are `100 + v`; each undirected edge becomes one citation.
pub fn write_raw_citation(dir: &Path, name: &str, graph: &Graph, labels: &LabelMap, vocab: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut content = String::new();
    for v in 0..graph.num_nodes() {
        let _ = write!(content, "{}", 100 + v);
        for _ in 0..vocab {
            let _ = write!(content, "\t{}", u8::from(rng.random_bool(0.3)));
        }
        let _ = writeln!(content, "\tclass{}", labels.get(v).unwrap());
    }
    let mut cites = String::new();
    for (a, b) in graph.edges() {
        let _ = writeln!(cites, "{}\t{}", 100 + b, 100 + a);
    }
    std::fs::write(dir.join(format!("{name}.content")), content).unwrap();
    std::fs::write(dir.join(format!("{name}.cites")), cites).unwrap();
}
