use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: not twice differentiable")]
    DoubleBackward { op: &'static str },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no optimum in grid: {0}")]
    NoOptimum(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Short machine-readable kind, used for CLI exit codes and JSON diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::DoubleBackward { .. } => "shape",
            Error::NonFinite { .. } | Error::Numerical(_) => "numerical",
            Error::Config(_) | Error::Json(_) => "config",
            Error::Data(_) | Error::Checkpoint(_) | Error::Io(_) => "data",
            Error::NoOptimum(_) => "no_optimum",
        }
    }
}
