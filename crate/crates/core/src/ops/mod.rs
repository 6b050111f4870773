//! Numerical kernels: each submodule provides a forward pass and the matching
//! backward (vector-Jacobian) pass as plain functions over tensors/slices.
//! The autodiff tape composes these; nothing here touches the tape.

pub mod conv;
pub mod elementwise;
pub mod loss;
pub mod norm;
pub mod pointwise;
pub mod softmax;
pub mod upsample;
