//! A self-contained engine for spatio-temporal (4-D) cardiac segmentation:
//! dense tensors, reverse-mode autodiff over a fixed op set (true 4-D
//! convolution, group norm, ReLU, nearest upsampling, channel softmax), an
//! encoder-decoder network over `(x, y, z, t)` volumes, a sparse-annotation
//! training loss with a temporal-consistency term, Adam with polynomial
//! learning-rate decay, synthetic cardiac phantoms with analytically known
//! ejection fraction, and evaluation metrics (Dice, temporal smoothness,
//! ejection fraction).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`): training
//! runs in `f32` for speed; gradient checking runs the same code in `f64`.
//! The [`Tensor32`]/[`Tensor64`] (and matching model/tape) aliases name the
//! two instantiations.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Dims6, Tensor};

/// Training-precision tensor.
pub type Tensor32 = tensor::Tensor<f32>;
/// Verification-precision tensor (gradient checks, oracles).
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tape::Tape<f32>;
pub type Tape64 = tape::Tape<f64>;
pub type Model32 = model::ModelParams<f32>;
pub type Model64 = model::ModelParams<f64>;
