//! Latent style-based quantum GAN toolkit.
//!
//! A statevector-simulated SU(4) generator and classical MLP generators are
//! trained against a WGAN-GP critic in the latent space of a convolutional
//! autoencoder. The [`experiments`] module runs capacity sweeps over critic and
//! generator sizes and fits the exponential scaling of the optimal capacity.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gan;
pub mod metrics;
pub mod nets;
pub mod quantum;
pub mod rng;

pub use error::{Error, Result};
