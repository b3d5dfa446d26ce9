use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("model set incomplete, missing tasks: {}", .0.join(", "))]
    MissingTasks(Vec<String>),
    #[error("input size mismatch: model expects {expected:?}, got {got:?}")]
    InputSize { expected: Vec<usize>, got: Vec<usize> },
    #[error("{0} split is empty")]
    EmptySplit(String),
    #[error("label `{label}` is outside the schema for {task}")]
    LabelOutsideSchema { task: String, label: String },
    #[error("schema hash mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Gbm(#[from] woundflow_gbm::GbmError),
    #[error("data leakage: test samples touched by {stage}: {}", ids.join(", "))]
    Leakage { stage: String, ids: Vec<String> },
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<Error> },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
