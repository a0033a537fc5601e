use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The local problem of an agent has no feasible point at its start time.
    #[error("initial infeasibility for agent {agent}: {detail}")]
    InitialInfeasibility { agent: u32, detail: String },

    #[error("invariant violated at t={t}: {detail}")]
    InvariantViolation { t: usize, detail: String },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
