use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    /// The raw kernel sum is too close to zero to divide by.
    #[error("normalization error: raw kernel sum {sum:e} is below {threshold:e} in magnitude")]
    Normalization { sum: f64, threshold: f64 },

    #[error("state error: {0}")]
    State(String),

    #[error("numeric error at step {step}: {detail}")]
    Numeric { step: usize, detail: String },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
