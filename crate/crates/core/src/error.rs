use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("non-finite value at flat index {0}")]
    NonFiniteValue(usize),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("wav error: {0}")]
    Wav(String),

    #[error("rank {rank} too large (limit {limit})")]
    RankTooLarge { rank: usize, limit: usize },

    #[error("singular covariance for view {0}; use eps > 0")]
    Singular(usize),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("{0}")]
    Invalid(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or settings rather than by a
    /// failure while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Manifest(_)
                | Error::InvalidConfig(_)
                | Error::RankTooLarge { .. }
                | Error::Shape(_)
        )
    }
}
