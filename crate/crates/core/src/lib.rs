//! Noise-injection pretext task for dense-prediction pretraining.
//!
//! Random noise masks decide which cells of a source image's multi-level
//! feature maps are replaced by the features of an unrelated noise image.
//! A discriminator head learns to locate the replaced cells. The same masks
//! double as free detection, semantic and instance labels.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

pub mod autodiff;
pub mod config;
pub mod encoder;
pub mod error;
pub mod grid;
pub mod io;
pub mod labels;
pub mod layer_split;
pub mod noise_mask;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use grid::{BinaryGrid, Grid};
pub use noise_mask::{Granularity, MaskGenConfig, NoiseMask};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Network32 = encoder::Network<f32>;
pub type Network64 = encoder::Network<f64>;
