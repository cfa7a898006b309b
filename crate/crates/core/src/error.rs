use thiserror::Error;

/// Errors raised by the numerical routines and the experiment drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("eigenvalue iteration failed to converge for a {dim}x{dim} matrix")]
    EigenFailure { dim: usize },

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error("unstable: eigenvalue {re}{im:+}i has modulus {modulus} >= 1")]
    Unstable { re: f64, im: f64, modulus: f64 },

    #[error("operator spectral radius {0} is not below one")]
    SpectralRadius(f64),

    #[error("stability conditions fail: {0}")]
    StabilityFailure(String),

    #[error("iteration did not converge: {0}")]
    NoConvergence(&'static str),

    #[error("iterate diverged at step {step}")]
    Diverged { step: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
