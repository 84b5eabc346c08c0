//! Contextualized multi-task super-resolution.
//!
//! A single-image super-resolution stack built around a content-adaptive
//! deconvolutional interpolator and two context branches: one predicts the
//! intermediate HR image together with a salient-boundary map, the other
//! predicts the residual left over by the first. A learned 3x3 fusion filter
//! combines the two into the final HR estimate.
//!
//! The crate is generic over the scalar type (`f32` for training and
//! inference, `f64` for gradient checking); concrete aliases live at the
//! crate root.

pub mod dataset;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod model_io;
pub mod network;
pub mod ops;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training/inference precision.
pub type Tensor32 = tensor::Tensor<f32>;
/// Gradient-check precision.
pub type Tensor64 = tensor::Tensor<f64>;
pub type ImagePlane32 = imaging::ImagePlane<f32>;
pub type ImagePlane64 = imaging::ImagePlane<f64>;
pub type NetworkParams32 = network::NetworkParams<f32>;
pub type TrainingTriplet32 = imaging::TrainingTriplet<f32>;
