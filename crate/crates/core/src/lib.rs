//! Self-attention node embeddings over random walks.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: adjacency, node features, labels, train/validation/test splits and their file formats.
//! - [`walks`]: uniform random walks and neighbour sampling.
//! - [`numerics`]: dense tensors with a reverse-mode tape, generic over `f32`/`f64`.
//! - [`encoder`]: the walk transformer (multi-head self-attention + feed-forward stack).
//! - [`objective`]: sampled-softmax neighbour prediction loss and its full-softmax counterpart.
//! - [`trainer`]: the training loop, Adam and checkpoint persistence.
//! - [`infer`]: embeddings for nodes unseen during training.
//! - [`evaluator`]: logistic-regression node classification, the multi-split protocol and the paired t-test.
//! - [`datasets`]: converters for the content/cites citation-network layout.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the `parallel` feature disabled
//! every loop runs sequentially and results are identical either way.

pub mod datasets;
pub mod encoder;
pub mod evaluator;
pub mod exec;
pub mod graph;
pub mod infer;
pub mod numerics;
pub mod objective;
pub mod rng;
pub mod trainer;
pub mod walks;

mod error;

pub use error::{Error, Result};
