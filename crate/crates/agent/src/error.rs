use thiserror::Error;

pub type Result<T, E = AgentError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Core(#[from] epiflow_core::Error),
    #[error(transparent)]
    Nn(#[from] epiflow_nn::NnError),
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    NotEnoughSamples { have: usize, need: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
