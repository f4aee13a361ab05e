use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("missing precoder block for RRH {rrh}, user {user}")]
    MissingBlock { rrh: usize, user: usize },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("RRH {0} is inactive but transmits")]
    InactiveTransmits(usize),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("did not converge: {0}")]
    NotConverged(String),
    #[error("guard violated: {0}")]
    Guard(String),
    #[error(transparent)]
    Conic(#[from] conic::ConicError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
