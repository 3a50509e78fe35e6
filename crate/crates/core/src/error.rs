use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite logit at position {0}")]
    NonFiniteLogit(usize),

    #[error("parameter outside its domain: {0}")]
    Domain(String),

    #[error("objective is not finite when perturbing coordinate {coord}")]
    NonFiniteObjective { coord: usize },

    #[error("optimisation diverged at step {step}")]
    Diverged {
        step: usize,
        report: Box<crate::optimizer::FitReport>,
    },

    #[error("invalid estimate: {0}")]
    Estimate(String),

    #[error("invalid experiment: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
