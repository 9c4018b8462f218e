//! Federated Naive Bayes with governance-regularized aggregation.
//!
//! Each node fits a hybrid categorical/Gaussian Naive Bayes model on its own
//! data. A server combines node scores as a weighted log-sum-exp mixture and
//! learns the mixture weights on validation data, pulled toward a prior
//! derived from each node's governance profile.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod governance;
pub mod local_model;
pub mod mog;
pub mod partition;
pub mod rng;
pub mod weight_learning;

pub use error::{Error, Result};
