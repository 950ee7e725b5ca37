use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};

use super::io::{parse_node_id, read_to_string, write_string};
use super::{Graph, LabelMap};
use crate::rng::{self, Stream};
use crate::{Error, Result};

pub const SPLIT_TRAIN_PER_CLASS: usize = 20;
pub const SPLIT_VALIDATION_SIZE: usize = 1000;
pub const SPLIT_TEST_SIZE: usize = 1000;

/// Disjoint train / validation / test node sets for one repetition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train_per_class: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { train_per_class: SPLIT_TRAIN_PER_CLASS, validation: SPLIT_VALIDATION_SIZE, test: SPLIT_TEST_SIZE }
    }
}

/// `repeats` splits with the standard sizes: 20 labelled nodes per class for training, then
/// 1000 validation and 1000 test nodes drawn uniformly from the remaining labelled nodes.
pub fn make_splits(graph: &Graph, labels: &LabelMap, repeats: usize, seed: u64) -> Result<Vec<Split>> {
    make_splits_with(graph, labels, repeats, seed, SplitSizes::default())
}

pub fn make_splits_with(
    graph: &Graph,
    labels: &LabelMap,
    repeats: usize,
    seed: u64,
    sizes: SplitSizes,
) -> Result<Vec<Split>> {
    let by_class: Vec<Vec<usize>> = (0..labels.num_classes())
        .map(|c| {
            labels.nodes_of_class(c).into_iter().filter(|&v| v < graph.num_nodes() && graph.is_present(v)).collect()
        })
        .collect();
    for (c, nodes) in by_class.iter().enumerate() {
        if nodes.len() < sizes.train_per_class {
            return Err(Error::Insufficient(format!(
                "class {} has {} labelled nodes, need {}",
                labels.class_names()[c],
                nodes.len(),
                sizes.train_per_class
            )));
        }
    }
    let labelled: usize = by_class.iter().map(Vec::len).sum();
    let needed = sizes.train_per_class * by_class.len() + sizes.validation + sizes.test;
    if labelled < needed {
        return Err(Error::Insufficient(format!("{labelled} labelled nodes, need {needed}")));
    }

    let splits = (0..repeats)
        .map(|r| {
            let sub_seed = rng::derive_seed(seed, Stream::Splits, &[r as u64]);
            let mut rng = rng::stream(sub_seed, Stream::Splits, &[]);
            let mut taken = vec![false; graph.num_nodes()];
            let mut train = Vec::with_capacity(sizes.train_per_class * by_class.len());
            for nodes in &by_class {
                for &v in nodes.choose_multiple(&mut rng, sizes.train_per_class) {
                    taken[v] = true;
                    train.push(v);
                }
            }
            let mut rest: Vec<usize> = by_class.iter().flatten().copied().filter(|&v| !taken[v]).collect();
            rest.sort_unstable();
            rest.shuffle(&mut rng);
            let validation = rest[..sizes.validation].to_vec();
            let test = rest[sizes.validation..sizes.validation + sizes.test].to_vec();
            Split { train, validation, test, seed: sub_seed }
        })
        .collect();
    Ok(splits)
}

pub fn save_split(split: &Split, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("# seed={}\n", split.seed);
    for (name, ids) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        let _ = writeln!(out, "[{name}]");
        for id in ids {
            let _ = writeln!(out, "{id}");
        }
    }
    write_string(path.as_ref(), &out)
}

pub fn load_split(path: impl AsRef<Path>) -> Result<Split> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut split = Split { train: vec![], validation: vec![], test: vec![], seed: 0 };
    let mut section: Option<&mut Vec<usize>> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(s) = c.trim().strip_prefix("seed=") {
                split.seed = s.trim().parse().map_err(|_| Error::parse(path, line_no, "invalid seed"))?;
            }
            continue;
        }
        match line {
            "[train]" => section = Some(&mut split.train),
            "[validation]" => section = Some(&mut split.validation),
            "[test]" => section = Some(&mut split.test),
            _ => {
                let id = parse_node_id(line, path, line_no)?;
                section.as_mut().ok_or_else(|| Error::parse(path, line_no, "node id outside a section"))?.push(id);
            }
        }
    }
    Ok(split)
}
