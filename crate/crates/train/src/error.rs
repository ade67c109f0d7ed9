use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] df3d_core::CoreError),
    #[error(transparent)]
    Model(#[from] df3d_models::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] df3d_nn::checkpoint::CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error("phase {phase} diverged at step {step}; state written to {dump}")]
    Diverged {
        phase: u8,
        step: usize,
        dump: PathBuf,
    },
    #[error("frozen stage-1 parameters changed during phase 3 ({before} -> {after})")]
    FrozenChanged { before: String, after: String },
    #[error("index out of range: {0}")]
    Index(String),
    #[error("render: {0}")]
    Render(String),
}

impl TrainError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
