use std::path::PathBuf;

/// Errors produced anywhere in the training stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error in {source_name} at byte {offset}: {message}")]
    Format {
        source_name: String,
        offset: u64,
        message: String,
    },
    #[error("format error in {source_name} at row {row}, column {col}: {message}")]
    Table {
        source_name: String,
        row: usize,
        col: usize,
        message: String,
    },
    #[error("numerical error at step {step}: {message}")]
    Numerical { step: u64, message: String },
    #[error("logic error: {0}")]
    Logic(String),
    #[error("harness error: {0}")]
    Harness(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Data(_) => "data",
            Error::Format { .. } | Error::Table { .. } => "format",
            Error::Numerical { .. } => "numerical",
            Error::Logic(_) => "logic",
            Error::Harness(_) => "harness",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
