use thiserror::Error;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("non-finite input at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("need at least {need} rows, have {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row counts differ: {left} vs {right}")]
    RowCountMismatch { left: usize, right: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("target length {targets} does not match {rows} rows")]
    TargetLength { rows: usize, targets: usize },
    #[error("unsupported model format version {0}")]
    FormatVersion(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GbdtError> = std::result::Result<T, E>;
