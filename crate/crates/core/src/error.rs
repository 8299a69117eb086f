use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator, agents, or harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fitting error at grid node (traffic={traffic}, bandwidth={bandwidth}): {reason}")]
    Fit {
        traffic: f64,
        bandwidth: f64,
        reason: String,
    },

    #[error("parse error in {path} at line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("model file {0} contains no grid rows")]
    EmptyModel(PathBuf),

    #[error("scaling error: {0}")]
    Scaling(String),

    #[error("episode lifecycle error: {0}")]
    Lifecycle(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported agent: {0}")]
    UnsupportedAgent(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding error: {0}")]
    Image(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
