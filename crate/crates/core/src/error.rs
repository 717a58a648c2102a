use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("load error: {0}")]
    Load(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("build error: {0}")]
    Build(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Stats(#[from] cyclexplain_stats::StatsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CoreError::Io { path: path.to_path_buf(), message: err.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
