use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-stochastic row in {what} at {index}: entries sum to {sum}")]
    NonStochasticRow { what: String, index: String, sum: f64 },

    #[error("mixing weight {value} at {index} lies outside [0, 1]")]
    MixOutOfRange { index: String, value: f64 },

    #[error("invalid population {population}: {reason}")]
    InvalidPopulation { population: usize, reason: String },

    #[error("invalid weight function: {0}")]
    InvalidWeight(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("action {action} is not feasible in state {state} of population {population}")]
    Infeasible { population: usize, state: usize, action: usize },

    #[error("population {population} has no absorbing `star` state")]
    MissingStar { population: usize },

    #[error("population {population} is not transient at this measure (taboo series diverges)")]
    NotTransient { population: usize },

    #[error("empty measure flow")]
    EmptyFlow,

    #[error("flow length mismatch: expected {expected}, got {got}")]
    HorizonMismatch { expected: usize, got: usize },

    #[error("horizon {horizon} too short: tail bound {tail_bound:e} exceeds tolerance {tol:e}")]
    HorizonTooShort { horizon: usize, tail_bound: f64, tol: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
