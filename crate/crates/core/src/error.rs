use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure at t = {t}: {reason}")]
    NumericalFailure { t: f64, reason: String },

    #[error("hyperboloid s = {s}: slices cover t <= {available}, sample needs t up to {needed}")]
    SpanViolation { s: f64, available: f64, needed: f64 },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("inconsistent diagnostic: {0}")]
    Inconsistent(String),

    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
