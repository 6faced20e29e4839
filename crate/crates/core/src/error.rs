use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("linear system is singular ({0})")]
    Singular(&'static str),

    #[error("dual variable must be non-negative, got {0}")]
    NegativeMultiplier(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("constrained problem is infeasible (max utility slack {slack:.6e})")]
    Infeasible { slack: f64 },

    #[error("linear program is {0}")]
    Lp(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
