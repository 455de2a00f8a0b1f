//! Deep one-class classification with intra-class splitting.
//!
//! The crate trains an autoencoder on normal data, splits the training set
//! into typical and atypical subsets by reconstruction similarity, and then
//! trains a small convolutional classifier with closeness, intra-class, and
//! dispersion objectives so that held-out anomalies score high. Everything is
//! built on an in-crate reverse-mode autodiff graph and is deterministic for a
//! fixed seed.

pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod harness;
pub mod kernels;
pub mod metrics;
pub mod nn;
pub mod oneclass;
pub mod optim;
pub mod scalar;
pub mod split;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Scalar type used by the shipped training pipeline.
pub type Real = f32;

/// Tensor of the pipeline scalar type.
pub type Tensor32 = Tensor<f32>;

/// Double-precision tensor, used by gradient checks and the metric oracles.
pub type Tensor64 = Tensor<f64>;
