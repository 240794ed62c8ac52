use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] epiflow_core::Error),

    #[error(transparent)]
    Agent(#[from] epiflow_agent::AgentError),

    #[error("config {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown policy {0:?}; expected one of no-intervention, ep-fixed, ep-fixed-<rate>, ep-soft, ep-hard, ep-lockdown, pseudo-expert")]
    UnknownPolicy(String),

    #[error("checkpoint {0} does not exist")]
    MissingCheckpoint(PathBuf),

    #[error("report failed validation: {0}")]
    InvalidReport(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
