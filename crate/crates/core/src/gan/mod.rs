//! WGAN-GP training of latent generators against an MLP critic.

pub mod generator;
pub mod steps;
pub mod toy;
pub mod train;

pub use generator::{Generator, GeneratorSpec, LatentGenerator};
pub use steps::{critic_step, generator_step, gradient_penalty, CriticStep};
pub use toy::{LatentMixture, ToyTarget};
pub use train::{
    gather_rows, read_evals, read_steps, train, EvalRecord, EvalSetup, GanTrainConfig, StepRecord, TrainOutcome, Trainer,
    CHECKPOINT_FILE, EVALS_FILE, STEPS_FILE,
};
