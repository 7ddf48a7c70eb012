use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric parameter outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An inconsistent or invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Shapes or lengths that do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    /// An operation called in a state where it is not allowed.
    #[error("usage error: {0}")]
    Usage(String),

    /// A checkpoint or artifact produced for a different setup.
    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
