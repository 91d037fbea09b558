//! Metric-learning losses for speaker-verification embeddings.
//!
//! The classifier weight matrix is read as a set of *speaker bases*, one
//! trainable vector per speaker. Two losses are defined on those bases:
//! a between-class term that spreads the bases apart and a hard-negative term
//! that mines the most confusable bases for every utterance. Both see every
//! speaker at every step, independent of mini-batch composition. They sit
//! next to softmax, center, additive-margin softmax and GE2E losses, all with
//! analytic gradients checked against finite differences.
//!
//! The rest of the crate is the harness around the losses: a small MLP
//! encoder, synthetic speaker data, an Adam/SGD training loop, EER
//! evaluation with cosine or b-vector scoring, and the `speaker-bases` CLI.
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod training;

pub use error::{Error, Result};
