use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("state became non-finite during integration (dt or input too large?)")]
    NonFiniteState,
    #[error("transition density unavailable for the {0} environment")]
    DensityUnavailable(&'static str),
    #[error("all particle likelihoods underflowed; filter diverged")]
    DegenerateWeights,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("symmetric eigendecomposition did not converge")]
    EigendecompositionFailure,
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("{0} did not converge after {1} iterations")]
    NonConvergence(&'static str, usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training aborted after {0} consecutive failed iterations")]
    TrainingAborted(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
