//! Concept-whitening laboratory: a normalization layer that whitens a batch
//! and rotates the result so named concepts land on dedicated latent axes,
//! together with the alternating training procedure and the interpretability
//! measurements built on top of it.

pub mod check;
pub mod error;
pub mod layer;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod stiefel;
pub mod synth;
pub mod trainer;
pub mod whitening;

pub use error::{CwError, Result};
pub use numerics::{backward, Gradients, Tensor};
