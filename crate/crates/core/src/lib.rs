//! Video captioning and question answering from scratch: a ResNet frame
//! encoder, a linear visual projector and a small decoder-only transformer,
//! trained in two stages on synthetic moving-shape videos and scored with
//! deterministic lexical metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod graph;
pub mod language;
pub mod metrics;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod vision;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type ModelBundle32 = model::ModelBundle<f32>;
pub type ModelBundle64 = model::ModelBundle<f64>;
pub type Checkpoint32 = train::Checkpoint<f32>;
pub type Trainer32 = train::Trainer<f32>;
/// Metric values computed exactly.
pub type ExactScore = num_rational::BigRational;
