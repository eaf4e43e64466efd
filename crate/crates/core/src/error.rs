use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid domain spec: {0}")]
    Domain(String),

    #[error("column `{column}` named in the domain spec is missing from the CSV header")]
    MissingColumn { column: String },

    #[error("row {row}, column `{column}`: value `{value}` is not in the declared domain")]
    UnknownValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: expected {expected} fields, found {found}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("marginal spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
