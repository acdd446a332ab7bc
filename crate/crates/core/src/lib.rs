//! Collaborative multi-domain image imputation engine.
//!
//! A single generator maps the channel-concatenated complement set of a
//! target domain (plus a one-hot mask) to the missing domain image. Training
//! combines multiple cycle-consistency, least-squares adversarial, domain
//! classification, and SSIM losses on top of a self-contained reverse-mode
//! autodiff engine. Everything runs on CPU at desk scale.

pub mod adam;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod kernels;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId, Padding};
pub use tensor::{DType, Scalar, Tensor};
