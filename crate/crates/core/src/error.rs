use thiserror::Error;

use crate::sampler::SampleStore;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("singular operator: eigenvalue {index} is zero and exponent {alpha} is negative")]
    SingularOperator { index: usize, alpha: f64 },

    /// The prior covariance has a zero eigenvalue, so λ_j/μ_{0j} is unbounded.
    #[error("assumption violated at mode {mode}: {reason}")]
    AssumptionViolation { mode: usize, reason: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Denoising score matching is ill-posed at zero diffusion time.
    #[error("diffusion time {tau} is unstable for this operation")]
    Instability { tau: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("chain diverged at iteration {iteration} (norm {norm:e})")]
    ChainDivergence {
        iteration: usize,
        norm: f64,
        /// Samples retained before the divergence was detected.
        partial: Box<SampleStore>,
    },

    #[error("oracle unsupported: {0}")]
    UnsupportedOracle(String),

    #[error("quadrature domain too small: {edge_mass:e} of the mass lies in the boundary band")]
    DomainTooSmall { edge_mass: f64 },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
