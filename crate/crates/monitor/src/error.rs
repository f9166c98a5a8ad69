use thiserror::Error;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid rule: {0}")]
    Rule(String),
    #[error("recording: {0}")]
    Recording(String),
    #[error(transparent)]
    Core(#[from] wban_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MonitorError> = std::result::Result<T, E>;
