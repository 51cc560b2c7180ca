use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ingestion error in {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("degenerate triangle face for component {component}")]
    DegenerateFace { component: usize },

    #[error("edit error{}: {reason}", op_index.map(|i| format!(" at op {i}")).unwrap_or_default())]
    Edit {
        op_index: Option<usize>,
        reason: String,
    },

    #[error("non-finite loss at step {step} (frame {frame}): {diagnostics}")]
    NonFinite {
        step: u64,
        frame: usize,
        diagnostics: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn edit(reason: impl Into<String>) -> Self {
        Error::Edit {
            op_index: None,
            reason: reason.into(),
        }
    }
}
