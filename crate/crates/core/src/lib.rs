//! Function-space Langevin posterior sampling with Gaussian diffusion-prior
//! scores.
//!
//! Elements of the separable Hilbert space `H` are represented by their
//! coefficients in the eigenbasis shared by the diffusion covariance `C` and
//! the prior covariance `C_{μ0}`. All operators are diagonal there.

pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod oracle;
pub mod sampler;
pub mod score;
pub mod spectral;

pub use error::{Error, Result};
