//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvatError {
    /// Tensor/operand shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A computation produced NaN or infinity.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The caller violated an API precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// A documented value contract was broken (norm budget, positive sigma, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed market data.
    #[error("data error: {0}")]
    Data(String),

    /// A row of an input file failed to parse.
    #[error("ingestion error in {file} line {line}: {msg}")]
    Ingest {
        file: String,
        line: usize,
        msg: String,
    },

    /// Score dates and panel calendar do not align.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Checkpoint bytes do not follow the documented format.
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SvatError>;
