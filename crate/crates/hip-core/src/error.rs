//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic bytes in tensor file (expected \"HIPT\")")]
    BadMagic,

    #[error("unsupported tensor rank {0} (expected 2)")]
    BadRank(u32),

    #[error("tensor dimensions invalid or overflowing: {rows} x {cols}")]
    DimensionOverflow { rows: u64, cols: u64 },

    #[error("truncated tensor payload: expected {expected} values, got {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("non-finite value at index {0} in tensor payload")]
    NonFiniteValue(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
