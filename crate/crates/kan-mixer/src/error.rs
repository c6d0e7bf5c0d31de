//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KanError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid dimension: {0}")]
    InvalidDim(String),

    #[error("patch divisibility: {0}")]
    PatchDivisibility(String),

    #[error("stale cache: {0}")]
    StaleCache(&'static str),

    #[error("label out of range: {0}")]
    LabelOutOfRange(String),

    #[error("bad magic: {0}")]
    BadMagic(String),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KanError>;
