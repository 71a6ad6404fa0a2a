use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid reward machine: {0}")]
    InvalidRm(String),
    #[error("invalid level: {0}")]
    InvalidLevel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sampling failed after {attempts} attempts: {reason}")]
    SamplingExhausted { attempts: usize, reason: String },
    #[error("edit {0:?} is not applicable")]
    EditNotApplicable(crate::mutations::EditKind),
    #[error("empty input")]
    Empty,
    #[error("student protocol error: {0}")]
    Student(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
