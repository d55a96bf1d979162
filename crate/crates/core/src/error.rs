use thiserror::Error;

/// Errors raised by model construction, validation and the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EtdError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} sums to {sum} (expected 1 within 1e-12)")]
    Stochasticity { what: String, sum: f64 },

    #[error("{what} has negative entry {value}")]
    NegativeProbability { what: String, value: f64 },

    #[error("coverage violated at state {state}, action {action}: target > 0 but behavior = 0")]
    Coverage { state: usize, action: usize },

    #[error("chain is not ergodic: {0}")]
    NonErgodic(String),

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },

    #[error("weight vector entry {index} is {value}; weights must be strictly positive")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("feature matrix is rank deficient (smallest singular value {sigma:e})")]
    RankDeficient { sigma: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("internal numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, EtdError>;
