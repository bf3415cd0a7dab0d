use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("batch normalization in train mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dataset is empty ({0})")]
    EmptyDataset(&'static str),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("sample {index}: task indicator must be 0 or 1, got {value}")]
    TaskFlag { index: usize, value: f64 },

    #[error("invalid argument `{name}`: {message}")]
    InvalidArgument { name: &'static str, message: String },

    #[error("invalid config at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("client {client}, round {round}: {source}")]
    Client {
        client: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("reproducibility violation for run {run_id}: {detail}")]
    Reproducibility { run_id: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
