//! Contribution decomposition for feedforward networks.
//!
//! The crate measures how hidden units causally drive a scalar output target
//! (ActGrad, hidden InputGrad, hidden Integrated Gradients), aggregates the
//! contributions per channel, decomposes them into sparse modes with a
//! thresholded autoencoder, and uses the modes for ablation/preservation
//! experiments and input-space contribution maps.

pub mod contrib;
pub mod error;
pub mod inputmap;
pub mod metrics;
pub mod modes;
pub mod nn;
pub mod perturb;
pub mod pipeline;
pub mod sae;
pub mod tensor;
pub mod zoo;

pub use contrib::{Algorithm, BaselineSpec, ContribMethod, ContributionTensor, TargetKind, TargetSpec};
pub use error::{CodecError, Result};
pub use nn::{ActivationTrace, ChannelMask, LayerSpec, ModelSpec, Tap};
pub use tensor::Tensor;
