use std::io;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("batch norm in train mode needs batch size >= 2, got {0}")]
    BatchTooSmall(usize),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph already consumed by a backward pass")]
    GraphConsumed,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {need} labelled windows, have {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("bad file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
