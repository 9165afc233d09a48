use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid UTF-8 input")]
    Encoding { path: PathBuf },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate {kind} `{id}`")]
    Duplicate {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        id: String,
    },

    #[error("invalid ranking for query `{query_id}`: {message}")]
    InvalidRanking { query_id: String, message: String },

    #[error("corrupt {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("unknown document `{0}`")]
    UnknownDocument(String),

    #[error("unknown {kind} `{value}`")]
    UnknownVariant { kind: &'static str, value: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite feature value at position {0}")]
    NonFiniteFeature(usize),

    #[error("positive index {index} out of range for group of size {size}")]
    PositiveOutOfRange { index: usize, size: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("no trainable queries ({skipped} skipped)")]
    NoTrainableQueries { skipped: usize },

    #[error("evaluation reports disagree: {0}")]
    MismatchedReports(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("synthetic benchmark is infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
