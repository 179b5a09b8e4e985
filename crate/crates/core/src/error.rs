//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("cluster has no points")]
    EmptyCluster,
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("degenerate filter: {0}")]
    DegenerateFilter(String),
    #[error("pose Hessian is numerically singular (det = {det:e})")]
    SingularHessian { det: f64 },
    #[error("covariance is not positive semi-definite")]
    NotPositiveSemiDefinite,
    #[error("training set has no {0} examples")]
    EmptyClass(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
