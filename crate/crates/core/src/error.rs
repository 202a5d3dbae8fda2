use std::path::PathBuf;

/// Errors surfaced by the engine.
///
/// Variants are grouped by how a caller is expected to react: shape and
/// parameter errors are programmer mistakes, format errors come from bad
/// files, divergence is a training outcome.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("layer state error: {0}")]
    State(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: format error at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("training diverged: non-finite loss at batch {batch} (epoch {epoch})")]
    Divergence { epoch: usize, batch: usize },

    #[error("gradient check failed: {0}")]
    Check(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
