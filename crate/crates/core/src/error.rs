use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{features} features exceeds the exact enumeration limit of {limit}")]
    EnumerationLimit { features: usize, limit: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("local accuracy check failed for {what}: row {row} has residual {residual:e} (tolerance {tolerance:e})")]
    LocalAccuracy {
        what: String,
        row: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("could not draw a usable covariate row after {attempts} attempts ({reason})")]
    Resample { attempts: usize, reason: String },

    #[error("all {cells} scenario cells failed; first: {first}")]
    GridFailed {
        cells: usize,
        first: String,
        resource_limit: bool,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
