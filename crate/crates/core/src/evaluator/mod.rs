//! Node-classification evaluation.
//!
//! Embeddings are scored by an L2-regularised multinomial logistic regression trained on the
//! labelled training nodes of a split, with the regularisation strength and the stopping epoch
//! chosen on the validation nodes. The protocol repeats this over several splits and aggregates
//! test accuracy; the paired t-test compares two models over the same splits.

mod logreg;
mod protocol;
mod ttest;

pub use logreg::{accuracy, select_logreg, train_logreg, Classifier, EmbeddingTable, LogRegConfig, LogRegFit};
pub use protocol::{
    mean_std, run_protocol, run_split, split_embeddings, training_graph, validation_accuracy, DatasetBundle,
    ProtocolConfig, ProtocolResult, Setting, SplitResult,
};
pub use ttest::{paired_ttest, TTest};
