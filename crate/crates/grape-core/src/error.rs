//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrapeError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("csv parse error at data row {row}: {msg}")]
    CsvParse { row: usize, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("column {0} has no scaler state")]
    UnscaledColumn(usize),

    #[error("mask sampling failed: {0}")]
    MaskSampling(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("experiment trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<GrapeError>,
    },
}

pub type Result<T> = std::result::Result<T, GrapeError>;
