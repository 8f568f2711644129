//! Feedforward network engine with activation/gradient taps.
//!
//! A model is a chain of layers over "nodes": node 0 is the input and node
//! `i + 1` is the output of layer `i`. Residual additions read one extra
//! earlier node. Taps name layer outputs whose activations and gradients are
//! exposed to the contribution algorithms.

mod grad;
mod model;
pub(crate) mod ops;

pub use grad::{finite_difference_gradient, ParamGrads};
pub use model::{ActivationTrace, ChannelMask, LayerKind, LayerSpec, ModelSpec, Tap};
