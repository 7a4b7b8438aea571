use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("row {row}: expected {expected} cells, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("column not found: {0}")]
    MissingColumn(String),
    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("{cell}, run {run}: {source}")]
    Run {
        cell: String,
        run: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// The message without the variant prefix, for configuration problems.
    pub fn detail(&self) -> String {
        match self {
            Error::Config(m) => m.clone(),
            other => other.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
