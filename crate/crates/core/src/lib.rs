//! Trajectory-matching dataset distillation for Wi-Fi CSI activity recognition.
//!
//! The crate compresses a labelled dataset into a handful of learnable
//! synthetic samples per class. Expert networks are trained on the full data
//! and their per-epoch parameters recorded ([`expert`]); the synthetic set is
//! then optimised so that a few differentiable SGD steps on it carry a student
//! network from an expert checkpoint towards a later one ([`distill`]).
//! Coreset baselines ([`coreset`]) and an evaluation harness ([`eval`]) measure
//! how well the small sets train fresh networks.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the element type for common uses.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coreset;
pub mod csi;
pub mod distill;
pub mod error;
pub mod eval;
pub mod expert;
pub mod graph;
pub mod models;
pub mod rng;
pub mod scalar;
pub mod tensor;
mod binio;
mod train;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Params32 = models::NetworkParams<f32>;
pub type Params64 = models::NetworkParams<f64>;
pub type Dataset32 = csi::LabeledDataset<f32>;
pub type Dataset64 = csi::LabeledDataset<f64>;
pub type Trajectory32 = expert::Trajectory<f32>;
pub type Trajectory64 = expert::Trajectory<f64>;
pub type Synthetic32 = distill::SyntheticDataset<f32>;
pub type Synthetic64 = distill::SyntheticDataset<f64>;
