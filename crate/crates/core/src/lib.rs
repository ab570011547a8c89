//! Kalman variational auto-encoder.
//!
//! A per-frame VAE maps video frames to low-dimensional encodings `a_t`,
//! which are modeled by a linear Gaussian state space model whose matrices
//! are a softmax-weighted mix of `K` global sets chosen by a recurrent
//! network. Inference over the latent states is exact (Kalman filter,
//! smoother, forward-filter backward-sample); training maximizes a
//! single-sample evidence lower bound.

pub mod checkpoint;
pub mod dynparam;
pub mod error;
pub mod imputation;
pub mod kvae;
pub mod lgssm;
pub mod nn;
pub mod params;
pub mod train;
pub mod vae;

#[cfg(feature = "oracle")]
pub mod oracle;

pub use error::{CoreError, Result};
