//! Sheaf neural networks on heterogeneous graphs.
//!
//! A typed graph gets a cellular sheaf: a d-dimensional stalk per node and
//! edge, with learned d x d restriction maps predicted per incidence from
//! node features and/or one-hot node and edge types. The sheaf Laplacian
//! drives a discrete diffusion process over stacked node stalks, and task
//! heads decode the diffused representations for node classification or link
//! prediction. Everything runs on an in-crate reverse-mode autodiff tape and
//! is verified against finite differences.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod graph;
pub mod heads;
pub mod laplacian;
pub mod metrics;
pub mod model;
pub mod predictor;
pub mod restriction;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
