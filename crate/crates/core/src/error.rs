//! Error type shared by every module of the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("token id {id} out of vocabulary (size {vocab_size})")]
    Vocabulary { id: u32, vocab_size: usize },

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    Truncation { len: usize, max_len: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("stale tape: backward already ran on this recording; re-run forward first")]
    StaleTape,

    #[error("training diverged at epoch {epoch}: {detail}")]
    Training { epoch: usize, detail: String },

    #[error("index {index} out of range (limit {limit})")]
    Index { index: usize, limit: usize },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("unsupported task: {0}")]
    UnsupportedTask(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt section {tag}: {detail}")]
    Corruption { tag: String, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config(_) => 3,
            Error::Data(_)
            | Error::Format(_)
            | Error::Corruption { .. }
            | Error::Io { .. }
            | Error::Vocabulary { .. }
            | Error::Truncation { .. }
            | Error::Domain(_)
            | Error::UnsupportedTask(_)
            | Error::InsufficientData { .. }
            | Error::Validation(_)
            | Error::Sampling(_)
            | Error::Index { .. } => 4,
            Error::Dimension(_) | Error::Numeric(_) | Error::StaleTape | Error::Training { .. } => {
                1
            }
        }
    }
}
