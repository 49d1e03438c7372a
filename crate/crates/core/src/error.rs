use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty trace")]
    EmptyTrace,
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("smoothness violated: density ratio {ratio} exceeds 1/sigma = {bound}")]
    SmoothnessViolated { ratio: f64, bound: f64 },
    #[error("not checkable exactly: {0}")]
    NotCheckableExactly(String),
    #[error("insufficient trials: {got} < {min}")]
    InsufficientTrials { got: usize, min: usize },
    #[error("linear loss required, got {0}")]
    LinearLossRequired(String),
    #[error("empty grid")]
    EmptyGrid,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
