//! Frequency-domain multivariate forecaster with dynamic cross-variable and
//! static band-pass filters, built on a small complex reverse-mode autodiff.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod autodiff;
pub mod checkpoint;
pub mod complex_nn;
pub mod data;
pub mod dcfilter;
pub mod embedding;
pub mod error;
pub mod model;
pub mod runner;
pub mod scalar;
pub mod sgfilter;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use model::{count_parameters, Checkpoint, FilterTs, ModelConfig, ModelParams};
pub use scalar::Scalar;
pub use sgfilter::{build_filter_bank, FilterBank, SplitFingerprint};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type FilterTs64 = FilterTs<f64>;
pub type FilterTs32 = FilterTs<f32>;
