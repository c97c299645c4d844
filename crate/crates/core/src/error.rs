use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Dimension { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{op}: cannot view {from:?} ({count} elements) as {to:?}")]
    ElementCount { op: &'static str, from: Vec<usize>, to: Vec<usize>, count: usize },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("{op}: degenerate input: {detail}")]
    Degenerate { op: &'static str, detail: String },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tensor belongs to a different tape")]
    ForeignTensor,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("method mismatch: {0}")]
    MethodMismatch(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NumericAbort { epoch: usize, batch: usize },

    #[error("{what}: need at least {need}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("{path}: bad magic (expected {expected:?})")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: file truncated while reading {what}")]
    Truncated { path: PathBuf, what: String },

    #[error("{path}: dimension mismatch: {detail}")]
    FormatDimension { path: PathBuf, detail: String },

    #[error("{path}: malformed content: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
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

    /// True for failures caused by numerics rather than inputs or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NumericAbort { .. })
    }
}
