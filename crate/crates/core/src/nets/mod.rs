//! Classical networks: latent MLPs (critic, classical generator) and the
//! convolutional image autoencoder.

pub mod autoencoder;
pub mod mlp;

pub use autoencoder::{nchw_to_nhwc, nhwc_to_nchw, train_ae, AeConfig, AeEpochRecord, AeTrainConfig, Autoencoder, Pass};
pub use mlp::{mlp_param_count, Activation, Mlp, MlpConfig};

/// Noise dimension of the classical generator.
pub const DEFAULT_NOISE_DIM: usize = 10;
/// Latent dimension shared by the autoencoder and both generators.
pub const DEFAULT_LATENT_DIM: usize = 24;
