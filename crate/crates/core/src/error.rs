use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown category {value:?} for column {column:?} (row {row})")]
    UnknownCategory {
        column: String,
        value: String,
        row: usize,
    },
    #[error("missing column {name:?} in header")]
    MissingColumn { name: String },
    #[error("csv error at {path}: {msg}")]
    Csv { path: String, msg: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("privacy calibration failed: {0}")]
    Calibration(String),
    #[error("regression fit failed: {0}")]
    Fit(String),
    #[error("pooling failed: {0}")]
    Pooling(String),
    #[error("statistic undefined: {0}")]
    Stats(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
