use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{name} = {value} is outside the domain {domain}")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("non-finite field at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last distance {distance:e})")]
    NonConvergence { iterations: usize, distance: f64 },

    #[error("degenerate Malliavin derivative: {0}")]
    DegenerateDerivative(String),

    #[error("ensemble invalid: {failures} of {n_paths} paths failed")]
    EnsembleInvalid { failures: usize, n_paths: usize },

    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
