//! Compressive-sensing reconstruction: block-based Gaussian sampling, a
//! classical ISTA baseline, and an unrolled ISTA network with
//! ratio-conditioned stages, built on a small reverse-mode autodiff engine.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below are what the CLI and the test-suites use.

pub mod adam;
pub mod autodiff;
mod container;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod gradcheck;
pub mod image;
pub mod ista;
pub mod kernels;
pub mod kv;
pub mod measurement;
pub mod metrics;
pub mod net;
pub mod sampling;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use autodiff::{Graph, NodeId};
pub use error::{Error, Result};
pub use kernels::ConvSpec;
pub use measurement::Measurements;
pub use metrics::Psnr;
pub use net::{Model, NetConfig};
pub use sampling::{make_ratio_set, SamplingOperator};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{Checkpoint, TrainConfig};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type SamplingOperator64 = SamplingOperator<f64>;
pub type Model64 = Model<f64>;
pub type Checkpoint64 = Checkpoint<f64>;
