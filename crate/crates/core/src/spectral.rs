//! Coefficient-space representation of Hilbert-space elements.
//!
//! Every operator here is diagonal in one shared orthonormal eigenbasis
//! `(e_j)`, so an element is stored as its first `D` coefficients and an
//! operator as its first `D` eigenvalues. The basis functions themselves are
//! never materialized.

use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// An element of `H` truncated to its first `dim` eigenbasis coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CoeffVec(Vec<f64>);

impl CoeffVec {
    /// Wraps `coeffs`, rejecting empty input and non-finite entries.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidDimension("coefficient vector is empty".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("coefficient vector"));
        }
        Ok(Self(coeffs))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "CoeffVec dimension must be positive");
        Self(vec![0.0; dim])
    }

    pub(crate) fn from_vec_unchecked(coeffs: Vec<f64>) -> Self {
        debug_assert!(!coeffs.is_empty());
        Self(coeffs)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Norm in `H`, which by Parseval is the Euclidean norm of the coefficients.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self(self.0.iter().map(|c| a * c).collect())
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &CoeffVec, b: f64) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &CoeffVec) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }
}

impl TryFrom<Vec<f64>> for CoeffVec {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        CoeffVec::new(v)
    }
}

impl From<CoeffVec> for Vec<f64> {
    fn from(v: CoeffVec) -> Self {
        v.0
    }
}

impl Index<usize> for CoeffVec {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for CoeffVec {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Generating law for an eigenvalue sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum EigenLaw {
    /// `λ_j = scale · j^(−exponent)`; trace-class under refinement iff `exponent > 1`.
    Power { exponent: f64, scale: f64 },
    /// `λ_j = value` for every mode. Only meaningful at finite `D`.
    Constant { value: f64 },
}

impl EigenLaw {
    pub fn power(exponent: f64) -> Self {
        EigenLaw::Power {
            exponent,
            scale: 1.0,
        }
    }

    pub fn identity() -> Self {
        EigenLaw::Constant { value: 1.0 }
    }

    pub fn eigenvalue(&self, j: usize) -> f64 {
        match *self {
            EigenLaw::Power { exponent, scale } => scale * (j as f64).powf(-exponent),
            EigenLaw::Constant { value } => value,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            EigenLaw::Power { exponent, scale } => {
                if !(exponent > 1.0 && exponent.is_finite()) {
                    return Err(invalid(
                        "exponent",
                        format!("power law needs exponent > 1 to stay trace-class, got {exponent}"),
                    ));
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(invalid("scale", format!("must be positive, got {scale}")));
                }
            }
            EigenLaw::Constant { value } => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(invalid("value", format!("must be positive, got {value}")));
                }
            }
        }
        Ok(())
    }
}

/// A covariance-type operator, diagonal in the shared eigenbasis.
///
/// Eigenvalues are nonnegative. Zero eigenvalues are representable so that
/// degenerate modes can be sampled and flagged; operations that need strict
/// positivity check for them explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralOperator {
    eigenvalues: Vec<f64>,
    law: Option<EigenLaw>,
}

impl SpectralOperator {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidDimension("operator has no eigenvalues".into()));
        }
        if let Some(bad) = eigenvalues.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(invalid(
                "eigenvalues",
                format!("must be finite and nonnegative, found {bad}"),
            ));
        }
        Ok(Self {
            eigenvalues,
            law: None,
        })
    }

    /// First `dim` eigenvalues of `law`.
    pub fn from_law(law: EigenLaw, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("truncation dimension must be ≥ 1".into()));
        }
        law.validate()?;
        Ok(Self {
            eigenvalues: (1..=dim).map(|j| law.eigenvalue(j)).collect(),
            law: Some(law),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_law(EigenLaw::identity(), dim).expect("identity law is valid")
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn law(&self) -> Option<EigenLaw> {
        self.law
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.eigenvalues.iter().all(|&l| l > 0.0)
    }

    /// Eigenvalues of `C^alpha`, erroring on `0^negative`.
    pub fn powers(&self, alpha: f64) -> Result<Vec<f64>> {
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(j, &l)| {
                if l == 0.0 && alpha < 0.0 {
                    Err(Error::SingularOperator { index: j, alpha })
                } else {
                    Ok(l.powf(alpha))
                }
            })
            .collect()
    }

    /// Same law, different truncation. Explicit eigenvalue lists are
    /// truncated or, when growing, rejected.
    pub fn retruncate(&self, dim: usize) -> Result<Self> {
        match self.law {
            Some(law) => Self::from_law(law, dim),
            None if dim <= self.dim() => Self::new(self.eigenvalues[..dim].to_vec()),
            None => Err(Error::InvalidDimension(format!(
                "cannot extend an explicit eigenvalue list from {} to {dim} modes",
                self.dim()
            ))),
        }
    }
}

/// `N(mean, covariance)` on `H`, truncated to the covariance dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeasure {
    pub covariance: SpectralOperator,
    pub mean: CoeffVec,
}

impl GaussianMeasure {
    pub fn new(covariance: SpectralOperator, mean: CoeffVec) -> Result<Self> {
        check_dim(covariance.dim(), mean.dim())?;
        Ok(Self { covariance, mean })
    }

    pub fn centered(covariance: SpectralOperator) -> Self {
        let dim = covariance.dim();
        Self {
            covariance,
            mean: CoeffVec::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }
}

/// Orthogonal projection onto the first `dim` modes, zero-padding when `dim`
/// exceeds the input dimension.
pub fn project(x: &CoeffVec, dim: usize) -> Result<CoeffVec> {
    if dim == 0 {
        return Err(Error::InvalidDimension("projection dimension must be ≥ 1".into()));
    }
    let mut out = vec![0.0; dim];
    let n = dim.min(x.dim());
    out[..n].copy_from_slice(&x.as_slice()[..n]);
    Ok(CoeffVec(out))
}

/// `C^alpha x`, coefficientwise `λ_j^alpha x^(j)`.
pub fn apply_power(op: &SpectralOperator, alpha: f64, x: &CoeffVec) -> Result<CoeffVec> {
    check_dim(op.dim(), x.dim())?;
    let powers = op.powers(alpha)?;
    Ok(CoeffVec(
        powers.iter().zip(x.iter()).map(|(p, c)| p * c).collect(),
    ))
}

/// `Tr(C^alpha) = Σ_j λ_j^alpha` over the truncation.
pub fn trace_power(op: &SpectralOperator, alpha: f64) -> f64 {
    op.eigenvalues.iter().map(|l| l.powf(alpha)).sum()
}

/// One draw from `measure`; coefficients are independent `N(m_j, μ_{0j})`.
pub fn sample_gaussian<R: Rng + ?Sized>(measure: &GaussianMeasure, rng: &mut R) -> CoeffVec {
    CoeffVec(
        measure
            .covariance
            .eigenvalues
            .iter()
            .zip(measure.mean.iter())
            .map(|(&var, &m)| {
                let z: f64 = rng.sample(StandardNormal);
                m + var.sqrt() * z
            })
            .collect(),
    )
}

/// Result of checking that `C` and `C_{μ0}` have a bounded eigenvalue ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    /// `p0^(j) = λ_j / μ_{0j}`.
    pub ratios: Vec<f64>,
    pub max: f64,
}

pub fn validate_ratio(c: &SpectralOperator, c_mu0: &SpectralOperator) -> Result<RatioReport> {
    check_dim(c.dim(), c_mu0.dim())?;
    let mut ratios = Vec::with_capacity(c.dim());
    for (j, (&l, &m)) in c.eigenvalues.iter().zip(&c_mu0.eigenvalues).enumerate() {
        if m == 0.0 {
            return Err(Error::AssumptionViolation {
                mode: j,
                reason: "prior covariance eigenvalue is zero".into(),
            });
        }
        ratios.push(l / m);
    }
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RatioReport { ratios, max })
}
