//! Dense tensors, reverse-mode differentiation, optimizers and checkpoints.

pub mod checkpoint;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{Checkpoint, DType};
pub use graph::{Graph, Var};
pub use kernels::ConvGeom;
pub use optim::{clip_global_norm, global_norm, AdamConfig, AdamState};
pub use params::{lecun_normal, ParamSet};
pub use tensor::Tensor;
