//! Minimal reverse-mode differentiation over chains of CNN layers.
//!
//! A [`Graph`] is an ordered list of [`LayerSpec`]s with a parameter store.
//! `forward` records a [`Trace`]; `backward` walks it in reverse and returns
//! gradients for every parameter tensor and, optionally, for the input batch,
//! which is what gradient-sign attacks need.
//!
//! Storage is generic over [`Scalar`]: `f32` for training and attacks, `f64`
//! for finite-difference verification ([`gradcheck`]).

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layer;
pub mod loss;
mod ops;
pub mod scalar;
pub mod store;
pub mod tensor;

pub use error::{DiffError, Result};
pub use graph::{Gradients, Graph, Mode, Node, Trace};
pub use layer::{Activation, Conv2dSpec, FeatureShape, LayerSpec, PoolKind, PoolSpec, StftSpec, WindowKind};
pub use ops::spectral::{window_values, StftKernel, StftOut, MAGNITUDE_FLOOR};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// `sign` with `sign(0) = 0`.
pub fn sign<F: Scalar>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}
