//! Ground truth independent of the sampler: direct Rosenbrock draws,
//! conjugate linear-Gaussian posteriors, 2D grid quadrature, and a
//! conservative reference chain for posteriors without closed forms.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::{estimate_lipschitz, Likelihood, Operator, PosteriorSpec};
use crate::sampler::{max_step_size, run_chain, ChainConfig, SampleStore};
use crate::score::Score;
use crate::spectral::{trace_power, CoeffVec};

/// Product of independent per-mode Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                found: variances.len(),
            });
        }
        if means.is_empty() {
            return Err(Error::InvalidDimension("no modes".into()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("diagonal Gaussian"));
        }
        Ok(Self { means, variances })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    /// First `dim` modes.
    pub fn truncated(&self, dim: usize) -> Self {
        Self {
            means: self.means[..dim].to_vec(),
            variances: self.variances[..dim].to_vec(),
        }
    }
}

/// Exact iid draws from `p(x₁, x₂) ∝ exp(−x₁²/2 − (x₂ − x₁²)²)` via
/// `x₁ ~ N(0, 1)`, `x₂ | x₁ ~ N(x₁², 1/2)`.
pub fn rosenbrock_direct_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SampleStore> {
    if n == 0 {
        return Err(invalid("n", "need at least one sample"));
    }
    let sd = 0.5f64.sqrt();
    SampleStore::from_rows(
        2,
        (0..n).map(|_| {
            let x1: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            vec![x1, x1 * x1 + sd * z]
        }),
    )
}

/// Per-mode conjugate posterior for a mode read-out with iid Gaussian noise.
pub fn linear_gaussian_posterior(spec: &PosteriorSpec) -> Result<DiagGaussian> {
    let Likelihood::Forward(problem) = &spec.likelihood else {
        return Err(Error::UnsupportedOracle(
            "conjugate posterior needs a mode-observation operator".into(),
        ));
    };
    let Operator::ModeObservation { d0 } = problem.operator else {
        return Err(Error::UnsupportedOracle(format!(
            "no closed-form posterior for {:?}",
            problem.operator
        )));
    };
    let s2 = problem.noise.variance();
    let prior = &spec.prior;
    let mut means = prior.mean.as_slice().to_vec();
    let mut variances = prior.covariance.eigenvalues().to_vec();
    for j in 0..d0 {
        let mu0 = variances[j];
        if mu0 == 0.0 {
            continue;
        }
        let var = 1.0 / (1.0 / mu0 + 1.0 / s2);
        means[j] = var * (means[j] / mu0 + problem.y[j] / s2);
        variances[j] = var;
    }
    DiagGaussian::new(means, variances)
}

/// Width of the boundary band, as a fraction of each axis range.
const EDGE_BAND: f64 = 0.02;
/// Largest tolerated mass inside the boundary band.
const EDGE_MASS_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMoments {
    pub mean: [f64; 2],
    pub variance: [f64; 2],
    pub covariance: f64,
}

/// Normalized density on a regular 2D grid, trapezoid rule.
///
/// Node `(i, j)` sits at `(x_lo + i·hx, y_lo + j·hy)` for `0 ≤ i, j ≤ resolution`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity2D {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: usize,
    /// Unnormalized log density at the nodes, row `i` (x index) major.
    pub log_values: Vec<f64>,
    /// `log Z` from the trapezoid rule.
    pub log_norm: f64,
    /// Normalized cell masses (mean of the four corners), row major.
    cell_mass: Vec<f64>,
}

impl GridDensity2D {
    fn h(&self) -> (f64, f64) {
        let n = self.resolution as f64;
        (
            (self.x_range.1 - self.x_range.0) / n,
            (self.y_range.1 - self.y_range.0) / n,
        )
    }

    fn node(&self, i: usize, j: usize) -> (f64, f64) {
        let (hx, hy) = self.h();
        (self.x_range.0 + i as f64 * hx, self.y_range.0 + j as f64 * hy)
    }

    /// Normalized density at node `(i, j)`.
    pub fn density(&self, i: usize, j: usize) -> f64 {
        (self.log_values[i * (self.resolution + 1) + j] - self.log_norm).exp()
    }

    /// Total normalized trapezoid mass; 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.cell_mass.iter().sum()
    }

    pub fn moments(&self) -> GridMoments {
        let n = self.resolution;
        let (hx, hy) = self.h();
        let w = |i: usize| if i == 0 || i == n { 0.5 } else { 1.0 };
        let mut s = [0.0f64; 6];
        for i in 0..=n {
            for j in 0..=n {
                let (x, y) = self.node(i, j);
                let p = w(i) * w(j) * hx * hy * self.density(i, j);
                s[0] += p;
                s[1] += p * x;
                s[2] += p * y;
                s[3] += p * x * x;
                s[4] += p * y * y;
                s[5] += p * x * y;
            }
        }
        let mx = s[1] / s[0];
        let my = s[2] / s[0];
        GridMoments {
            mean: [mx, my],
            variance: [s[3] / s[0] - mx * mx, s[4] / s[0] - my * my],
            covariance: s[5] / s[0] - mx * my,
        }
    }

    /// Mass of cells whose centre lies in the outer band of either axis.
    pub fn edge_mass(&self) -> f64 {
        let n = self.resolution;
        let band = ((EDGE_BAND * n as f64).ceil() as usize).max(1);
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i < band || i >= n - band || j < band || j >= n - band {
                    mass += self.cell_mass[i * n + j];
                }
            }
        }
        mass
    }

    fn bin_of(lo: f64, hi: f64, bins: usize, v: f64) -> usize {
        let t = ((v - lo) / (hi - lo) * bins as f64).floor();
        (t.max(0.0) as usize).min(bins - 1)
    }

    /// Truth mass per cell of a `bins × bins` partition of the grid domain,
    /// row (x bin) major. Grid cells are assigned by their centre.
    pub fn bin_masses(&self, bins: usize) -> Vec<f64> {
        let n = self.resolution;
        let (hx, hy) = self.h();
        let mut out = vec![0.0; bins * bins];
        for i in 0..n {
            let cx = self.x_range.0 + (i as f64 + 0.5) * hx;
            let bx = Self::bin_of(self.x_range.0, self.x_range.1, bins, cx);
            for j in 0..n {
                let cy = self.y_range.0 + (j as f64 + 0.5) * hy;
                let by = Self::bin_of(self.y_range.0, self.y_range.1, bins, cy);
                out[bx * bins + by] += self.cell_mass[i * n + j];
            }
        }
        out
    }

    /// Histogram bin of a point, clamping out-of-range points to edge bins.
    pub fn bin_index(&self, bins: usize, x: f64, y: f64) -> usize {
        Self::bin_of(self.x_range.0, self.x_range.1, bins, x) * bins
            + Self::bin_of(self.y_range.0, self.y_range.1, bins, y)
    }

    /// Draws from the piecewise-uniform cell distribution.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleStore> {
        let res = self.resolution;
        let (hx, hy) = self.h();
        let mut cdf = Vec::with_capacity(self.cell_mass.len());
        let mut acc = 0.0;
        for m in &self.cell_mass {
            acc += m;
            cdf.push(acc);
        }
        SampleStore::from_rows(
            2,
            (0..n).map(|_| {
                let u = rng.random::<f64>() * acc;
                let c = cdf.partition_point(|&v| v < u).min(cdf.len() - 1);
                let (i, j) = (c / res, c % res);
                vec![
                    self.x_range.0 + (i as f64 + rng.random::<f64>()) * hx,
                    self.y_range.0 + (j as f64 + rng.random::<f64>()) * hy,
                ]
            }),
        )
    }
}

/// Normalized trapezoid quadrature of `exp(log_density)` on a rectangle.
pub fn grid_quadrature_2d<F>(
    log_density: F,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
) -> Result<GridDensity2D>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    if resolution < 64 {
        return Err(invalid("resolution", format!("need at least 64 per axis, got {resolution}")));
    }
    if !(x_range.1 > x_range.0 && y_range.1 > y_range.0) {
        return Err(invalid("ranges", "each range must have positive width"));
    }
    let n = resolution;
    let hx = (x_range.1 - x_range.0) / n as f64;
    let hy = (y_range.1 - y_range.0) / n as f64;
    let log_values: Vec<f64> = (0..=n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let x = x_range.0 + i as f64 * hx;
            let f = &log_density;
            (0..=n).map(move |j| f(x, y_range.0 + j as f64 * hy))
        })
        .collect();
    if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("log density"));
    }
    let shift = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let at = |i: usize, j: usize| (log_values[i * (n + 1) + j] - shift).exp();
    let raw: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..n).map(move |j| {
                0.25 * (at(i, j) + at(i + 1, j) + at(i, j + 1) + at(i + 1, j + 1)) * hx * hy
            })
        })
        .collect();
    let z: f64 = raw.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::NonFinite("normalization constant"));
    }
    let grid = GridDensity2D {
        x_range,
        y_range,
        resolution,
        log_values,
        log_norm: shift + z.ln(),
        cell_mass: raw.iter().map(|m| m / z).collect(),
    };
    let edge_mass = grid.edge_mass();
    if edge_mass > EDGE_MASS_TOL {
        return Err(Error::DomainTooSmall { edge_mass });
    }
    Ok(grid)
}

/// Quadrature of the Rosenbrock-type target on a domain holding all but a
/// negligible fraction of its mass.
pub fn rosenbrock_grid(resolution: usize) -> Result<GridDensity2D> {
    grid_quadrature_2d(
        crate::forward::RosenbrockTarget::log_density,
        (-5.5, 5.5),
        (-4.0, 34.0),
        resolution,
    )
}

/// Minimum number of iterations for a reference run.
pub const REFERENCE_MIN_ITERS: usize = 1_000_000;
/// Upper bound on retained reference samples; the lag is chosen to respect it.
const REFERENCE_MAX_SAMPLES: usize = 100_000;

/// Theorem-style cap `1/(√128 Tr(C^α) L)` for a spec, using the analytic
/// likelihood Lipschitz constant when known and a probe estimate otherwise.
pub fn step_size_cap<S: Score + ?Sized>(
    spec: &PosteriorSpec,
    score: &S,
    alpha: f64,
    tau: f64,
) -> Result<f64> {
    let c = score.operator();
    let l_phi = match spec.likelihood.lipschitz_bound() {
        Some(l) => l,
        None => {
            let d0 = spec.likelihood.d0();
            let ev = spec.prior.covariance.eigenvalues();
            let spread = ev[..d0].iter().map(|v| v.sqrt()).fold(0.0, f64::max);
            let centre = spec.prior.mean.as_slice()[..d0]
                .iter()
                .map(|m| m.abs())
                .fold(0.0, f64::max);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            estimate_lipschitz(spec, 64, centre + 4.0 * spread, &mut rng)?
        }
    };
    if alpha < 2.0 && !c.is_strictly_positive() {
        return Err(Error::SingularOperator { index: 0, alpha: alpha - 2.0 });
    }
    let l_tau = score.lipschitz(tau);
    let trace = trace_power(c, alpha);
    let l = (trace_power(c, alpha - 2.0) * l_tau * l_tau + trace * l_phi * l_phi)
        .sqrt()
        .max(l_phi);
    max_step_size(trace, l)
}

/// Long, small-step run started at the prior mean; tagged as a reference.
///
/// The first tenth is discarded and the lag keeps at most
/// `100 000` samples.
pub fn reference_chain<S: Score + ?Sized>(
    spec: &PosteriorSpec,
    score: &S,
    alpha: f64,
    tau: f64,
    fine_gamma: f64,
    long_n: usize,
    seed: u64,
) -> Result<SampleStore> {
    if long_n < REFERENCE_MIN_ITERS {
        return Err(invalid(
            "long_n",
            format!("reference runs need at least {REFERENCE_MIN_ITERS} iterations"),
        ));
    }
    let cap = step_size_cap(spec, score, alpha, tau)?;
    if !(fine_gamma > 0.0 && fine_gamma <= cap / 4.0) {
        return Err(invalid(
            "fine_gamma",
            format!("{fine_gamma} must lie in (0, {:.4e}], a quarter of the step-size cap", cap / 4.0),
        ));
    }
    let burn_in = long_n / 10;
    let lag = ((long_n - burn_in) / REFERENCE_MAX_SAMPLES).max(1);
    let cfg = ChainConfig::new(alpha, fine_gamma, tau, long_n, seed).with_thinning(burn_in, lag);
    let init = CoeffVec::new(spec.prior.mean.as_slice().to_vec())?;
    let mut store = run_chain(&cfg, score, spec, init)?;
    if let Some(meta) = store.meta.as_mut() {
        meta.reference = true;
    }
    Ok(store)
}
