//! Measurement operators, noise models and the negative log-likelihood `Φ0`.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::{CoeffVec, GaussianMeasure};

/// Built-in measurement operators `A: H → R^N`. Each depends only on the
/// first `d0` coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "operator", rename_all = "snake_case")]
pub enum Operator {
    /// `A(x) = (x^(1), …, x^(d0))`.
    ModeObservation { d0: usize },
    /// `A(x)_i = (x^(i))² + x^(i)/2` for `i ≤ d0`.
    QuadraticMap { d0: usize },
    /// `A ≡ 0` with `n_obs` outputs.
    Zero { d0: usize, n_obs: usize },
}

impl Operator {
    pub fn d0(&self) -> usize {
        match *self {
            Operator::ModeObservation { d0 }
            | Operator::QuadraticMap { d0 }
            | Operator::Zero { d0, .. } => d0,
        }
    }

    pub fn n_obs(&self) -> usize {
        match *self {
            Operator::ModeObservation { d0 } | Operator::QuadraticMap { d0 } => d0,
            Operator::Zero { n_obs, .. } => n_obs,
        }
    }

    fn apply_slice(&self, x: &[f64]) -> Vec<f64> {
        match *self {
            Operator::ModeObservation { d0 } => x[..d0].to_vec(),
            Operator::QuadraticMap { d0 } => x[..d0].iter().map(|&v| v * v + 0.5 * v).collect(),
            Operator::Zero { n_obs, .. } => vec![0.0; n_obs],
        }
    }

    /// Adds `w · ∇_x A_i(x)` into `out`.
    fn add_component_gradient(&self, i: usize, x: &[f64], w: f64, out: &mut [f64]) {
        match *self {
            Operator::ModeObservation { .. } => out[i] += w,
            Operator::QuadraticMap { .. } => out[i] += w * (2.0 * x[i] + 0.5),
            Operator::Zero { .. } => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    GaussianIid { variance: f64 },
}

impl NoiseModel {
    pub fn gaussian(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(invalid("variance", format!("must be positive, got {variance}")));
        }
        Ok(NoiseModel::GaussianIid { variance })
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseModel::GaussianIid { variance } => variance,
        }
    }
}

/// `y = A(X0) + b` with a known operator, noise law and observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardProblem {
    pub operator: Operator,
    pub noise: NoiseModel,
    pub y: Vec<f64>,
}

impl ForwardProblem {
    pub fn new(operator: Operator, noise: NoiseModel, y: Vec<f64>) -> Result<Self> {
        if operator.d0() == 0 {
            return Err(invalid("d0", "must be at least 1"));
        }
        if y.len() != operator.n_obs() {
            return Err(Error::DimensionMismatch {
                expected: operator.n_obs(),
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        NoiseModel::gaussian(noise.variance())?;
        Ok(Self { operator, noise, y })
    }

    /// `y = A(x_true) + b` with `b` drawn from the noise model.
    pub fn synthesize<R: Rng + ?Sized>(
        operator: Operator,
        noise: NoiseModel,
        x_true: &CoeffVec,
        rng: &mut R,
    ) -> Result<Self> {
        let clean = apply_operator(&operator, x_true)?;
        let sd = noise.variance().sqrt();
        let y = clean
            .into_iter()
            .map(|v| {
                let z: f64 = rng.sample(StandardNormal);
                v + sd * z
            })
            .collect();
        Self::new(operator, noise, y)
    }
}

/// Stylized two-dimensional ridge target with
/// `Φ0(x) = (x₂ − x₁²)² − x₂²/2`. Under a `N(0, I₂)` prior the posterior
/// density is `∝ exp(−x₁²/2 − (x₂ − x₁²)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RosenbrockTarget;

impl RosenbrockTarget {
    /// Unnormalized log posterior density on the plane.
    pub fn log_density(x1: f64, x2: f64) -> f64 {
        -0.5 * x1 * x1 - (x2 - x1 * x1).powi(2)
    }
}

/// The likelihood side of a posterior, expressed through `Φ0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "likelihood", rename_all = "snake_case")]
pub enum Likelihood {
    Forward(ForwardProblem),
    Rosenbrock(RosenbrockTarget),
}

impl Likelihood {
    pub fn d0(&self) -> usize {
        match self {
            Likelihood::Forward(p) => p.operator.d0(),
            Likelihood::Rosenbrock(_) => 2,
        }
    }

    /// Number of additive terms of `Φ0`, the unit of stochastic subsampling.
    pub fn n_components(&self) -> usize {
        match self {
            Likelihood::Forward(p) => p.operator.n_obs(),
            Likelihood::Rosenbrock(_) => 2,
        }
    }

    pub(crate) fn phi(&self, x: &[f64]) -> f64 {
        match self {
            Likelihood::Forward(p) => {
                let a = p.operator.apply_slice(x);
                let r2: f64 = p.y.iter().zip(&a).map(|(y, a)| (y - a).powi(2)).sum();
                r2 / (2.0 * p.noise.variance())
            }
            Likelihood::Rosenbrock(_) => (x[1] - x[0] * x[0]).powi(2) - 0.5 * x[1] * x[1],
        }
    }

    /// Adds `-∇φ_i(x)` for component `i` into `out`.
    pub(crate) fn add_component_grad_log(&self, i: usize, x: &[f64], out: &mut [f64]) {
        match self {
            Likelihood::Forward(p) => {
                let a_i = match p.operator {
                    Operator::ModeObservation { .. } => x[i],
                    Operator::QuadraticMap { .. } => x[i] * x[i] + 0.5 * x[i],
                    Operator::Zero { .. } => 0.0,
                };
                let w = (p.y[i] - a_i) / p.noise.variance();
                p.operator.add_component_gradient(i, x, w, out);
            }
            Likelihood::Rosenbrock(_) => match i {
                0 => {
                    let r = x[1] - x[0] * x[0];
                    out[0] += 4.0 * x[0] * r;
                    out[1] -= 2.0 * r;
                }
                _ => out[1] += x[1],
            },
        }
    }

    /// Writes `∇ log ρ(y − A(x)) = -∇Φ0(x)` into `out`.
    pub(crate) fn grad_log_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.n_components() {
            self.add_component_grad_log(i, x, out);
        }
    }

    /// Global Lipschitz constant of `∇Φ0` when one exists in closed form.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match self {
            Likelihood::Forward(p) => match p.operator {
                Operator::ModeObservation { .. } => Some(1.0 / p.noise.variance()),
                Operator::Zero { .. } => Some(0.0),
                Operator::QuadraticMap { .. } => None,
            },
            Likelihood::Rosenbrock(_) => None,
        }
    }
}

/// Prior and likelihood together; `μ^y ∝ exp(−Φ0) μ0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSpec {
    pub prior: GaussianMeasure,
    pub likelihood: Likelihood,
}

impl PosteriorSpec {
    pub fn new(prior: GaussianMeasure, likelihood: Likelihood) -> Result<Self> {
        if prior.dim() < likelihood.d0() {
            return Err(Error::InvalidDimension(format!(
                "prior dimension {} is below the {} modes the likelihood reads",
                prior.dim(),
                likelihood.d0()
            )));
        }
        Ok(Self { prior, likelihood })
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn check_input(&self, x: &CoeffVec) -> Result<()> {
        if x.dim() < self.likelihood.d0() {
            return Err(Error::InvalidDimension(format!(
                "input has {} modes, likelihood reads {}",
                x.dim(),
                self.likelihood.d0()
            )));
        }
        Ok(())
    }
}

fn apply_operator(op: &Operator, x: &CoeffVec) -> Result<Vec<f64>> {
    if x.dim() < op.d0() {
        return Err(Error::InvalidDimension(format!(
            "operator reads {} modes, input has {}",
            op.d0(),
            x.dim()
        )));
    }
    Ok(op.apply_slice(x.as_slice()))
}

pub fn apply_forward(problem: &ForwardProblem, x: &CoeffVec) -> Result<Vec<f64>> {
    apply_operator(&problem.operator, x)
}

/// `Φ0(x; y)` with additive constants dropped.
pub fn neg_log_likelihood(spec: &PosteriorSpec, x: &CoeffVec) -> Result<f64> {
    spec.check_input(x)?;
    Ok(spec.likelihood.phi(x.as_slice()))
}

/// `∇ log ρ(y − A(x))`, zero above `D0`.
pub fn grad_log_likelihood(spec: &PosteriorSpec, x: &CoeffVec) -> Result<CoeffVec> {
    spec.check_input(x)?;
    let mut out = vec![0.0; x.dim()];
    spec.likelihood.grad_log_into(x.as_slice(), &mut out);
    Ok(CoeffVec::from_vec_unchecked(out))
}

/// Unbiased minibatch estimate `(N/|S|) Σ_{i∈S} ∇ log ρ_i`.
pub fn stochastic_grad_log_likelihood(
    spec: &PosteriorSpec,
    x: &CoeffVec,
    subset: &[usize],
) -> Result<CoeffVec> {
    spec.check_input(x)?;
    let n = spec.likelihood.n_components();
    if subset.is_empty() {
        return Err(invalid("subset", "minibatch must not be empty"));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= n) {
        return Err(invalid("subset", format!("index {bad} out of range for {n} components")));
    }
    let mut out = vec![0.0; x.dim()];
    for &i in subset {
        spec.likelihood.add_component_grad_log(i, x.as_slice(), &mut out);
    }
    let scale = n as f64 / subset.len() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(CoeffVec::from_vec_unchecked(out))
}

/// Uniform minibatch of `size` distinct component indices.
pub fn draw_subset<R: Rng + ?Sized>(n_components: usize, size: usize, rng: &mut R) -> Vec<usize> {
    index::sample(rng, n_components, size.min(n_components)).into_vec()
}

/// Empirical lower bound on the Lipschitz constant of `∇Φ0`.
///
/// Probes are drawn uniformly from the cube `[-radius, radius]^{D0}` (higher
/// modes zero) and each is paired with every other probe and with a nearby
/// point, so both global and local slopes are seen.
pub fn estimate_lipschitz<R: Rng + ?Sized>(
    spec: &PosteriorSpec,
    probes: usize,
    radius: f64,
    rng: &mut R,
) -> Result<f64> {
    if probes < 2 {
        return Err(invalid("probes", "need at least two probe points"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid("radius", "must be positive"));
    }
    let dim = spec.dim();
    let d0 = spec.likelihood.d0();
    let grad = |x: &[f64]| {
        let mut g = vec![0.0; dim];
        spec.likelihood.grad_log_into(x, &mut g);
        g
    };
    let mut points = Vec::with_capacity(2 * probes);
    for _ in 0..probes {
        let mut x = vec![0.0; dim];
        for v in &mut x[..d0] {
            *v = rng.random_range(-radius..radius);
        }
        let mut near = x.clone();
        for v in &mut near[..d0] {
            *v += 1e-4 * radius * rng.sample::<f64, _>(StandardNormal);
        }
        points.push(x);
        points.push(near);
    }
    let grads: Vec<Vec<f64>> = points.iter().map(|p| grad(p)).collect();
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(u, v)| (u - v).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut best: f64 = 0.0;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let dx = dist(&points[i], &points[j]);
            if dx > 0.0 {
                best = best.max(dist(&grads[i], &grads[j]) / dx);
            }
        }
    }
    Ok(best)
}
