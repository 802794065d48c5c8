//! Shared error type for the whole pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or model shape disagreement.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration or argument value.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Mathematically degenerate input (constant band, coincident
    /// centroids, single-cluster metrics, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// API contract violation (backward on non-scalar, reused graph, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Numeric failure at runtime (non-finite loss and friends).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed or missing data artifacts (bundles, checkpoints, images).
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
