use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the search pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph contains a cycle")]
    Cycle,

    #[error("path enumeration cap exceeded: graph has {count} paths (cap {cap})")]
    TooManyPaths { count: String, cap: usize },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("class id {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("unsupported format version {found} for {what} (expected {expected})")]
    FormatVersion {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("digest mismatch: stored {stored}, computed {computed}")]
    Digest { stored: String, computed: String },

    #[error("cost monotonicity violated between N_l={prev} and N_l={next}: {detail}")]
    Monotonicity {
        prev: usize,
        next: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
