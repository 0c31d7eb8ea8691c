use crate::units::{Nanos, Oid};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An event references an order in a way the lifecycle rules forbid.
    #[error("structural error for oid {oid} at t={timestamp}ns: {reason}")]
    Structural {
        oid: Oid,
        timestamp: Nanos,
        reason: String,
    },
    #[error("events out of order at index {index}: t={found}ns after t={previous}ns")]
    Ordering {
        index: usize,
        previous: Nanos,
        found: Nanos,
    },
    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: u64,
        field: String,
        message: String,
    },
    #[error("value outside domain: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn structural(oid: Oid, timestamp: Nanos, reason: impl Into<String>) -> Self {
        Error::Structural {
            oid,
            timestamp,
            reason: reason.into(),
        }
    }
}
