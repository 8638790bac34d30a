use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("negative exit rate {rate} for state `{state}`")]
    NegativeRate { state: String, rate: f64 },

    #[error("zero exit rate for state `{state}` in a chain with more than one state")]
    AbsorbingState { state: String },

    #[error("invalid jump kernel row for state `{state}`: {reason}")]
    InvalidKernel { state: String, reason: String },

    #[error("chain is reducible: state `{to}` is not reachable from state `{from}`")]
    Reducible { from: String, to: String },

    #[error("chain has {n} states, above the configured limit of {limit}")]
    TooManyStates { n: usize, limit: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing derivative: {0}")]
    MissingDerivative(String),

    #[error("field not certified: {0}")]
    Certification(String),
}

pub type Result<T> = std::result::Result<T, Error>;
