use std::path::PathBuf;

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or inconsistent input data (ragged CSV rows, non-numeric
    /// cells, label problems, class-coverage failures, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Invalid configuration or argument values.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Numerical failure (singular linear system, inconsistent factor
    /// state, quadrature breakdown).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model schema mismatch: expected {expected:?}, found {found:?}")]
    SchemaMismatch { expected: String, found: String },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }

    /// True for bad configuration/usage as opposed to bad data files.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidArgument(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
