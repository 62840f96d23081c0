use thiserror::Error;

/// Errors raised by the library. Everything else is a plain value.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not skew-symmetric (|m + m^T| = {0:.3e})")]
    NotSkew(f64),
    #[error("chirality mismatch: {0:?} vs {1:?}")]
    Chirality(crate::lie::Chirality, crate::lie::Chirality),
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("metric invariance class does not support this operation: {0}")]
    Invariance(&'static str),
    #[error("wrong metric kind: {0}")]
    MetricKind(&'static str),
    #[error("step must be positive, got {0}")]
    Step(f64),
    #[error("velocity violates constraint by {0:.3e}")]
    Constraint(f64),
    #[error("singular {what} at the evaluation point ({value:.3e})")]
    Singular { what: &'static str, value: f64 },
    #[error("invalid gains: {0}")]
    Gains(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("non-finite state at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
