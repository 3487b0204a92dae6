use thiserror::Error;

/// Errors raised across simulation, fitting and theory computations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state exploded at observation {observation} (micro-step {micro_step}): |x| = {norm}")]
    Explosion {
        observation: usize,
        micro_step: usize,
        norm: f64,
    },
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("coordinate {index} out of range 1..={dim}")]
    Index { index: usize, dim: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid network parameters: {0}")]
    InvalidParams(String),
    #[error("class violation: {0}")]
    ClassViolation(String),
    #[error("infeasible architecture: {0}")]
    Infeasible(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
