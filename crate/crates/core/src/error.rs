use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("node {node}: {message}")]
    Node { node: usize, message: String },

    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("backward: {0}")]
    Backward(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("svd did not converge within {iterations} iterations ({rows}x{cols} matrix)")]
    SvdNoConvergence {
        rows: usize,
        cols: usize,
        iterations: usize,
    },

    #[error("non-finite {what} at batch {batch}")]
    Diverged { what: &'static str, batch: usize },

    #[error("config{}: {message}", if *line > 0 { format!(" line {line}") } else { String::new() })]
    Config { line: usize, message: String },

    #[error("{path}: {message} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by user input (bad config, missing files,
    /// corrupt checkpoints) rather than by an internal fault.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::Format { .. }
                | Error::Io { .. }
                | Error::SpecMismatch(_)
                | Error::InvalidArgument(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
