use std::io;

use thiserror::Error;

pub type Result<T, E = ArdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ArdError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("degenerate mask: row {row} has no allowed entries")]
    DegenerateMask { row: usize },
    #[error("higher-order differentiation is not supported: the tape was sealed by a backward pass")]
    DoubleBackward,
    #[error("{what} out of range: {detail}")]
    Range { what: &'static str, detail: String },
    #[error("unknown class label {0}")]
    UnknownClass(usize),
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("kv-cache state error: {0}")]
    CacheState(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("load error: {0}")]
    Load(String),
    #[error("non-finite loss at iteration {iteration} (step index {step}, parameter norm {param_norm:.6e})")]
    NonFinite { iteration: usize, step: usize, param_norm: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ArdError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ArdError::Config { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        ArdError::Dimension(msg.into())
    }
}
