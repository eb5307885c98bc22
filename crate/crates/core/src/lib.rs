//! Dual-space classification: a feature-space classifier's confidences are
//! averaged with confidences derived from a semantic-space regressor that
//! predicts label word vectors.

// `!(x > 0.0)` is used on purpose so NaN is rejected along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod confidence;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod experiment;
pub mod forest;
pub mod fusion;
pub mod hpo;
pub mod metrics;
pub mod model;
pub mod perceptron;
pub mod rng;

pub use confidence::ConfidenceMatrix;
pub use dataset::{Dataset, RawTable, Schema};
pub use embeddings::{EmbeddingTable, LabelVectorSet};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport};
pub use model::{Algorithm, Learner};
