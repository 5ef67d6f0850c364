//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's input contract (empty input,
    /// out-of-vocabulary token, zero-norm vector, bad hyperparameter...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tensor/grid dimensions do not agree.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    /// Every pair in a batch was degenerate; no signal to compute.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// An image sits alone in its cluster; no within-cluster partner exists.
    #[error("no partner for index {index}: cluster {cluster} is a singleton")]
    NoPartner { index: usize, cluster: usize },

    /// A binary artifact (checkpoint, optimizer state) failed to parse.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// Non-finite value where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}
