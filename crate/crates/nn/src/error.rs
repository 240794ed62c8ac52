use thiserror::Error;

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what} (layer {})", scope.map_or_else(|| "?".to_string(), |s| s.to_string()))]
    NonFinite { scope: Option<usize>, what: &'static str },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
