use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MarketError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("filter error: {0}")]
    Filter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("tuning error: {0}")]
    Tuning(String),
    #[error("gain estimator error: {0}")]
    Estimator(String),
    #[error("degenerate task: {0}")]
    Degenerate(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl MarketError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MarketError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than internal failure.
    pub fn is_usage(&self) -> bool {
        !matches!(self, MarketError::Numeric(_) | MarketError::Io { .. })
    }
}
