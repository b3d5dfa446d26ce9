use thiserror::Error;

#[derive(Debug, Error)]
pub enum GbmError {
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("feature `{0}` has no observed values")]
    EmptyFeature(String),
    #[error("feature count mismatch: expected {expected}, got {got}")]
    FeatureCountMismatch { expected: usize, got: usize },
    #[error("feature `{feature}` expects a {expected} value")]
    KindMismatch { feature: String, expected: &'static str },
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(f64),
    #[error("invalid gbm configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("ensemble file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GbmError>;
