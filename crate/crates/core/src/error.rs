use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LtvError>;

#[derive(Debug, Error)]
pub enum LtvError {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("division by a value with magnitude below 1e-300 in {op}")]
    DivisionByZero { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarBackward(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver diverged at iteration {iteration}: {source}")]
    SolverDiverged {
        iteration: usize,
        #[source]
        source: Box<LtvError>,
    },

    #[error("non-finite loss at batch {batch}: {breakdown}")]
    NonFiniteLoss { batch: usize, breakdown: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl LtvError {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        LtvError::Shape { op, msg: msg.into() }
    }
}
