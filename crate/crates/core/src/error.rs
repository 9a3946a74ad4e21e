use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes:?}")]
    Shape {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },

    #[error("non-finite value produced by {op}")]
    NumericFault { op: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("no hypothesis emitted end-of-sequence (widths tried: {widths:?}, max length {max_len})")]
    NoEos { widths: Vec<usize>, max_len: usize },

    #[error("feature {0} has zero variance over the training set")]
    ZeroVariance(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("finite-difference check is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
