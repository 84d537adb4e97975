//! Prior-informed heterogeneous brain-network classifier.
//!
//! Connectomes are decomposed into named subnetworks, each encoded by a
//! bidirectional convolutional encoder; subnetwork embeddings then interact
//! through semantic-prior-injected attention, and the learned interaction
//! distribution can be regularized toward a clinical prior during training.
//! Everything runs on a small reverse-mode tape ([`diffcore`]) with gradient
//! checking against finite differences, and the trained attention is turned
//! into interpretation outputs (pathway scores, region saliency).
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are the default instantiation.

pub mod diffcore;
pub mod encoder;
pub mod graphdata;
pub mod interpret;
pub mod ssil;
pub mod synthgen;
pub mod train;

mod error;
mod scalar;

pub use error::{KdError, Result};
pub use scalar::Scalar;

/// Negative slope used by every LeakyReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Clamp floor inside the prior-alignment KL logarithm.
pub const KL_EPSILON: f64 = 1e-8;

pub type Tensor64 = diffcore::Tensor<f64>;
pub type Tensor32 = diffcore::Tensor<f32>;
pub type Dataset64 = graphdata::Dataset<f64>;
pub type Connectome64 = graphdata::Connectome<f64>;
pub type ModelState64 = train::ModelState<f64>;
