//! Moment estimation with autocorrelation-aware errors, grid-KL, the
//! relative Fisher criterion for diagonal Gaussians, the convergence bound,
//! rate regression and dimension sweeps.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::PosteriorSpec;
use crate::oracle::{DiagGaussian, GridDensity2D};
use crate::sampler::{chain_rng, max_step_size, run_chain_observed, ChainConfig, ChainState, SampleStore};
use crate::score::{score_mismatch, DiffusionTime, Score};
use crate::spectral::{sample_gaussian, CoeffVec, GaussianMeasure, SpectralOperator};

/// A value with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `|self − truth| ≤ k · se`.
    pub fn within(&self, truth: f64, k: f64) -> bool {
        (self.value - truth).abs() <= k * self.se
    }
}

/// Asymptotic variance of the mean of a stationary series, `σ² · τ_int`,
/// from Geyer's initial monotone positive sequence.
pub fn asymptotic_variance(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let acov = |lag: usize| -> f64 {
        c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    };
    let g0 = acov(0);
    if g0 == 0.0 {
        return 0.0;
    }
    let mut total = -g0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = acov(2 * m) + acov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        total += 2.0 * pair;
        prev = pair;
        m += 1;
    }
    total.max(g0)
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample mean with autocorrelation-aware standard error.
pub fn mean_estimate(series: &[f64]) -> Estimate {
    Estimate {
        value: mean_of(series),
        se: (asymptotic_variance(series) / series.len() as f64).sqrt(),
    }
}

/// Unbiased sample covariance of two series with its standard error.
pub fn covariance_estimate(a: &[f64], b: &[f64]) -> Estimate {
    let n = a.len() as f64;
    let (ma, mb) = (mean_of(a), mean_of(b));
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let value = prod.iter().sum::<f64>() / (n - 1.0);
    Estimate {
        value,
        se: (asymptotic_variance(&prod) / n).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCovariance {
    pub i: usize,
    pub j: usize,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMoments {
    pub n_samples: usize,
    pub mean: Vec<Estimate>,
    pub variance: Vec<Estimate>,
    pub cross: Vec<CrossCovariance>,
}

impl ModeMoments {
    pub fn means(&self) -> Vec<f64> {
        self.mean.iter().map(|e| e.value).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.variance.iter().map(|e| e.value).collect()
    }
}

/// Per-mode moments plus the covariance of the first two modes.
pub fn moments(store: &SampleStore) -> Result<ModeMoments> {
    let pairs: &[(usize, usize)] = if store.dim() >= 2 { &[(0, 1)] } else { &[] };
    moments_with(store, pairs)
}

pub fn moments_with(store: &SampleStore, pairs: &[(usize, usize)]) -> Result<ModeMoments> {
    if store.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: store.len(),
        });
    }
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= store.dim() || *j >= store.dim()) {
        return Err(invalid("pairs", format!("({i}, {j}) outside {} modes", store.dim())));
    }
    let series: Vec<Vec<f64>> = (0..store.dim()).map(|j| store.mode(j)).collect();
    let per_mode: Vec<(Estimate, Estimate)> = series
        .par_iter()
        .map(|s| (mean_estimate(s), covariance_estimate(s, s)))
        .collect();
    let cross = pairs
        .iter()
        .map(|&(i, j)| CrossCovariance {
            i,
            j,
            estimate: covariance_estimate(&series[i], &series[j]),
        })
        .collect();
    Ok(ModeMoments {
        n_samples: store.len(),
        mean: per_mode.iter().map(|p| p.0).collect(),
        variance: per_mode.iter().map(|p| p.1).collect(),
        cross,
    })
}

/// Diagonal Gaussian fitted to the sample moments.
pub fn fit_diag_gaussian(store: &SampleStore) -> Result<DiagGaussian> {
    let m = moments_with(store, &[])?;
    DiagGaussian::new(m.means(), m.variances())
}

const BOOTSTRAP_REPLICATES: usize = 200;
const BOOTSTRAP_SEED: u64 = 0x6b6c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridKl {
    pub value: f64,
    /// Bootstrap standard error over resampled histograms.
    pub se: f64,
    pub bins: usize,
    pub n_samples: usize,
    /// More histogram cells than a tenth of the sample count.
    pub under_resolved: bool,
}

fn smoothed_kl(counts: &[f64], truth: &[f64], n: f64) -> f64 {
    let b = counts.len() as f64;
    counts
        .iter()
        .zip(truth)
        .map(|(&c, &p)| {
            let q = (c + 1.0) / (n + b);
            let p = (n * p + 1.0) / (n + b);
            q * (q / p).ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// KL(histogram ‖ truth) on a `bins × bins` partition of the truth grid's
/// domain using the first two coefficients. Both sides are Laplace smoothed
/// (one pseudo-count per cell) so the value is always finite.
pub fn grid_kl(store: &SampleStore, truth: &GridDensity2D, bins: usize) -> Result<GridKl> {
    if store.dim() < 2 {
        return Err(Error::InvalidDimension("grid-KL needs two coefficients".into()));
    }
    if store.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if bins == 0 {
        return Err(invalid("bins", "must be positive"));
    }
    let n = store.len();
    let cells = bins * bins;
    let under_resolved = cells > n / 10;
    if under_resolved {
        log::warn!("grid-KL with {cells} cells and {n} samples is under-resolved");
    }
    let truth_mass = truth.bin_masses(bins);
    let idx: Vec<usize> = store.samples().map(|s| truth.bin_index(bins, s[0], s[1])).collect();
    let hist = |picks: &mut dyn Iterator<Item = usize>| {
        let mut counts = vec![0.0; cells];
        for b in picks {
            counts[b] += 1.0;
        }
        counts
    };
    let value = smoothed_kl(&hist(&mut idx.iter().copied()), &truth_mass, n as f64);
    let reps: Vec<f64> = (0..BOOTSTRAP_REPLICATES)
        .into_par_iter()
        .map(|r| {
            let mut rng = chain_rng(BOOTSTRAP_SEED, r as u64);
            let counts = hist(&mut (0..n).map(|_| idx[rng.random_range(0..n)]));
            smoothed_kl(&counts, &truth_mass, n as f64)
        })
        .collect();
    let rm = mean_of(&reps);
    let se = (reps.iter().map(|v| (v - rm).powi(2)).sum::<f64>() / (reps.len() - 1) as f64).sqrt();
    Ok(GridKl {
        value,
        se,
        bins,
        n_samples: n,
        under_resolved,
    })
}

fn check_pair(nu: &DiagGaussian, mu: &DiagGaussian, c: &SpectralOperator) -> Result<()> {
    if nu.dim() != mu.dim() || nu.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            found: nu.dim().max(mu.dim()),
        });
    }
    if nu.variances.iter().chain(&mu.variances).any(|v| *v <= 0.0) {
        return Err(invalid("variance", "all variances must be positive"));
    }
    Ok(())
}

/// `∫ ‖C^{α/2} ∇ log(dν/dμ)‖² dν` for diagonal Gaussians:
/// `Σ_j λ_j^α [(m1−m2)²/s2² + (1/s2 − 1/s1)² s1]` with variances `s`.
pub fn gaussian_relative_fisher(
    nu: &DiagGaussian,
    mu: &DiagGaussian,
    c: &SpectralOperator,
    alpha: f64,
) -> Result<f64> {
    check_pair(nu, mu, c)?;
    let weights = c.powers(alpha)?;
    Ok(weights
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let (m1, s1) = (nu.means[j], nu.variances[j]);
            let (m2, s2) = (mu.means[j], mu.variances[j]);
            w * ((m1 - m2).powi(2) / (s2 * s2) + (1.0 / s2 - 1.0 / s1).powi(2) * s1)
        })
        .sum())
}

/// `KL(ν ‖ μ)` for diagonal Gaussians.
pub fn gaussian_kl(nu: &DiagGaussian, mu: &DiagGaussian) -> Result<f64> {
    if nu.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    if nu.variances.iter().chain(&mu.variances).any(|v| *v <= 0.0) {
        return Err(invalid("variance", "all variances must be positive"));
    }
    Ok(0.5
        * (0..nu.dim())
            .map(|j| {
                let (m1, s1) = (nu.means[j], nu.variances[j]);
                let (m2, s2) = (mu.means[j], mu.variances[j]);
                s1 / s2 + (m1 - m2).powi(2) / s2 - 1.0 + (s2 / s1).ln()
            })
            .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// `KL(ν0 ‖ μ^y)`.
    pub kl0: f64,
    pub n_iters: f64,
    pub gamma: f64,
    pub trace_c_alpha: f64,
    pub trace_c_alpha_minus_2: f64,
    /// `max{L_G, L_Φ0}`.
    pub lipschitz: f64,
    /// Score-mismatch constant `K`.
    pub k_mismatch: f64,
    pub tau: f64,
    pub eps_tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundDecomposition {
    /// `4 KL0 / (Nγ)`.
    pub initial: f64,
    /// `(16 √Tr(C^α) + 64) Tr(C^α) L² γ`.
    pub discretization: f64,
    /// `A1 τ²` with `A1 = (4/Tr(C^α) + 16) K²`.
    pub mismatch: f64,
    /// `A2 ε_τ²` with `A2 = (4/Tr(C^α) + 16) Tr(C^{α−2})`.
    pub score_error: f64,
    pub total: f64,
    pub gamma_cap: f64,
    /// Whether `γ` lies inside the range covered by the bound.
    pub gamma_valid: bool,
}

/// Right-hand side of the time-averaged relative Fisher bound, term by term.
pub fn theorem1_bound(p: &BoundParams) -> Result<BoundDecomposition> {
    let fields = [
        ("kl0", p.kl0),
        ("n_iters", p.n_iters),
        ("gamma", p.gamma),
        ("trace_c_alpha", p.trace_c_alpha),
        ("trace_c_alpha_minus_2", p.trace_c_alpha_minus_2),
        ("lipschitz", p.lipschitz),
        ("k_mismatch", p.k_mismatch),
        ("tau", p.tau),
        ("eps_tau", p.eps_tau),
    ];
    for (name, v) in fields {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid(name, format!("must be finite and nonnegative, got {v}")));
        }
    }
    if p.gamma == 0.0 {
        return Err(invalid("gamma", "must be positive"));
    }
    if p.n_iters == 0.0 {
        return Err(invalid("n_iters", "must be positive"));
    }
    if p.trace_c_alpha == 0.0 {
        return Err(invalid("trace_c_alpha", "must be positive"));
    }
    let tr = p.trace_c_alpha;
    let pre = 4.0 / tr + 16.0;
    let initial = 4.0 * p.kl0 / (p.n_iters * p.gamma);
    let discretization = (16.0 * tr.sqrt() + 64.0) * tr * p.lipschitz.powi(2) * p.gamma;
    let mismatch = pre * p.k_mismatch.powi(2) * p.tau.powi(2);
    let score_error = pre * p.trace_c_alpha_minus_2 * p.eps_tau.powi(2);
    let gamma_cap = if p.lipschitz > 0.0 {
        max_step_size(tr, p.lipschitz)?
    } else {
        f64::INFINITY
    };
    let gamma_valid = p.gamma <= gamma_cap;
    if !gamma_valid {
        log::warn!("γ = {} exceeds the bound's validity range {gamma_cap:.4e}", p.gamma);
    }
    Ok(BoundDecomposition {
        initial,
        discretization,
        mismatch,
        score_error,
        total: initial + discretization + mismatch + score_error,
        gamma_cap,
        gamma_valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
}

/// Least-squares slope of `log(error)` against `log(N)`.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: points.len(),
        });
    }
    if points.iter().any(|&(n, e)| !(n > 0.0 && e > 0.0)) {
        return Err(invalid("points", "rate fits need positive N and error values"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (mean_of(&xs), mean_of(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("points", "all N values coincide"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = (points.len() - 2) as f64;
    Ok(RateFit {
        slope,
        slope_se: (rss / dof / sxx).sqrt(),
        intercept,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub dim: usize,
    /// Signed error metrics with standard errors.
    pub metrics: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Per metric, `max − min` across dimensions.
    pub spread: Vec<f64>,
    /// Per metric, `√(Σ_D se²)`.
    pub pooled_se: Vec<f64>,
    pub stable: bool,
}

/// Runs `experiment(D)` for every truncation in `dims` (in parallel) and
/// calls the result stable when every metric's spread across `D` is at most
/// twice its pooled standard error.
pub fn dimension_sweep<F>(dims: &[usize], d0: usize, experiment: F) -> Result<SweepReport>
where
    F: Fn(usize) -> Result<Vec<Estimate>> + Sync,
{
    if dims.is_empty() {
        return Err(invalid("dims", "need at least one truncation"));
    }
    if dims.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("dims", "truncations must be strictly increasing"));
    }
    if dims[0] < d0 {
        return Err(invalid("dims", format!("every truncation must be at least D0 = {d0}")));
    }
    let points: Vec<SweepPoint> = dims
        .par_iter()
        .map(|&dim| experiment(dim).map(|metrics| SweepPoint { dim, metrics }))
        .collect::<Result<_>>()?;
    let n_metrics = points[0].metrics.len();
    if points.iter().any(|p| p.metrics.len() != n_metrics) {
        return Err(Error::Configuration("experiments returned different metric counts".into()));
    }
    let mut spread = Vec::with_capacity(n_metrics);
    let mut pooled_se = Vec::with_capacity(n_metrics);
    for m in 0..n_metrics {
        let vals = points.iter().map(|p| p.metrics[m].value);
        let hi = vals.clone().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.fold(f64::INFINITY, f64::min);
        spread.push(hi - lo);
        pooled_se.push(points.iter().map(|p| p.metrics[m].se.powi(2)).sum::<f64>().sqrt());
    }
    let stable = spread.iter().zip(&pooled_se).all(|(s, p)| *s <= 2.0 * p);
    Ok(SweepReport {
        points,
        spread,
        pooled_se,
        stable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchConstant {
    pub k: f64,
    pub tau: f64,
    pub probes: Vec<Vec<f64>>,
}

/// `K ≈ max_x ‖C C_{μ0}^{-1} x + S(τ, x)‖_H / τ` over the probe set.
pub fn estimate_mismatch_constant(
    c: &SpectralOperator,
    c_mu0: &SpectralOperator,
    probes: &[CoeffVec],
    tau: f64,
) -> Result<MismatchConstant> {
    if probes.is_empty() {
        return Err(invalid("probes", "need at least one probe"));
    }
    let t = DiffusionTime::new(tau).map_err(|_| Error::Instability { tau })?;
    let mut k: f64 = 0.0;
    for x in probes {
        k = k.max(score_mismatch(t, x, c, c_mu0)?.norm() / tau);
    }
    Ok(MismatchConstant {
        k,
        tau,
        probes: probes.iter().map(|p| p.as_slice().to_vec()).collect(),
    })
}

/// Salt separating the initial-draw RNG from the chain noise streams.
const INIT_STREAM_SALT: u64 = 0x1a17;

/// Per-iteration diagonal Gaussian fit across an ensemble of independent
/// chains started from draws of `init`, evaluated as the relative Fisher
/// criterion against `target`. Entry `k` belongs to `X_k`, `0 ≤ k ≤ N`.
///
/// Chain `i` draws its start from stream `i` of a salted seed and its noise
/// from stream `i` of `cfg.seed`.
pub fn ensemble_fisher_trajectory<S: Score + ?Sized>(
    cfg: &ChainConfig,
    score: &S,
    spec: &PosteriorSpec,
    init: &GaussianMeasure,
    n_chains: usize,
    target: &DiagGaussian,
) -> Result<Vec<f64>> {
    if n_chains < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n_chains,
        });
    }
    let dim = spec.dim();
    if init.dim() != dim || target.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: init.dim().min(target.dim()),
        });
    }
    let mut run_cfg = cfg.clone();
    run_cfg.burn_in = 0;
    run_cfg.lag = cfg.n_iters;
    let len = cfg.n_iters + 1;
    let width = 2 * dim;
    let sums = (0..n_chains)
        .into_par_iter()
        .try_fold(
            || vec![0.0; len * width],
            |mut acc, i| -> Result<Vec<f64>> {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_STREAM_SALT);
                rng.set_stream(i as u64);
                let x0 = sample_gaussian(init, &mut rng);
                let mut add = |k: usize, x: &[f64]| {
                    let row = &mut acc[k * width..(k + 1) * width];
                    for (j, &v) in x.iter().enumerate() {
                        row[j] += v;
                        row[dim + j] += v * v;
                    }
                };
                add(0, x0.as_slice());
                let state = ChainState::new(x0, cfg.seed, i as u64);
                run_chain_observed(&run_cfg, score, spec, state, i as u64, &mut add)?;
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![0.0; len * width],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let m = n_chains as f64;
    let weights = score.operator().powers(cfg.alpha)?;
    Ok((0..len)
        .into_par_iter()
        .map(|k| {
            let row = &sums[k * width..(k + 1) * width];
            (0..dim)
                .map(|j| {
                    let m1 = row[j] / m;
                    let s1 = ((row[dim + j] - m * m1 * m1) / (m - 1.0)).max(f64::MIN_POSITIVE);
                    let (m2, s2) = (target.means[j], target.variances[j]);
                    weights[j] * ((m1 - m2).powi(2) / (s2 * s2) + (1.0 / s2 - 1.0 / s1).powi(2) * s1)
                })
                .sum()
        })
        .collect())
}

/// `(1/N) Σ_{k<N} trajectory[k]`.
pub fn time_averaged(trajectory: &[f64], n: usize) -> Result<f64> {
    if n == 0 || n > trajectory.len() {
        return Err(invalid("n", format!("must lie in 1..={}", trajectory.len())));
    }
    Ok(trajectory[..n].iter().sum::<f64>() / n as f64)
}

/// Structured summary of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moments: Option<ModeMoments>,
    /// Per mode, sample moment minus oracle value, for means then variances.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_deltas: Option<OracleDeltas>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_kl: Option<GridKl>,
    /// Relative Fisher criterion of a Gaussian fit; exact only for Gaussian targets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fisher_gaussian_fit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundDecomposition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mismatch_constant: Option<MismatchConstant>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDeltas {
    pub oracle: DiagGaussian,
    pub mean_delta: Vec<Estimate>,
    pub variance_delta: Vec<Estimate>,
}

/// Sample moments minus oracle moments, carrying the sample standard errors.
pub fn oracle_deltas(m: &ModeMoments, oracle: &DiagGaussian) -> Result<OracleDeltas> {
    if m.mean.len() != oracle.dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.dim(),
            found: m.mean.len(),
        });
    }
    let delta = |e: &Estimate, t: f64| Estimate {
        value: e.value - t,
        se: e.se,
    };
    Ok(OracleDeltas {
        oracle: oracle.clone(),
        mean_delta: m.mean.iter().zip(&oracle.means).map(|(e, &t)| delta(e, t)).collect(),
        variance_delta: m
            .variance
            .iter()
            .zip(&oracle.variances)
            .map(|(e, &t)| delta(e, t))
            .collect(),
    })
}
