use thiserror::Error;

pub type Result<T, E = PfaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PfaError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("state error: {0}")]
    State(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    /// One of the two sensitive groups (or a required label within a group) has no members.
    #[error("degenerate group: {0}")]
    DegenerateGroup(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
