use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TencaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TencaError {
    /// Invalid shapes, channel counts, hyperparameters or schedules.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a domain invariant (non-finite pixels, constant
    /// reference image, colliding frame times, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A non-finite value appeared while stepping the automaton.
    #[error("numeric error at step {step}: {what}")]
    Numeric { step: usize, what: String },

    /// A caller broke an API contract (mismatched tape/params, list lengths).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated file ({missing} bytes missing)")]
    Truncated { path: PathBuf, missing: usize },

    #[error("{path}: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl TencaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TencaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        TencaError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
