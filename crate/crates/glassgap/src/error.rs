use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("size limit exceeded: {0}")]
    TooLarge(String),
    #[error("grid too small: {0}")]
    GridTooSmall(String),
    #[error("scheme unstable: {0}")]
    Unstable(String),
    #[error("did not converge: {0}")]
    NoConvergence(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
