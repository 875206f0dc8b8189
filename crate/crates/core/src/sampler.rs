//! The preconditioned Langevin recursion
//!
//! `X_{k+1} = X_k + γ_k (C^{α−1} η_k S(τ_k, X_k) + C^α ∇log ρ(y − A(X_k))) + √(2γ_k) ξ_k`
//!
//! with `ξ_k ~ N(0, C^α)`, together with step-size schedules, weighted
//! annealing, burn-in and thinning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::{draw_subset, PosteriorSpec};
use crate::score::Score;
use crate::spectral::{check_dim, trace_power, CoeffVec};

/// Default `‖x‖_H` ceiling above which a chain is declared divergent.
pub const DEFAULT_DIVERGENCE_CEILING: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { gamma: f64 },
    /// `γ_k = start (end/start)^{k/(N−1)}`.
    Geometric { start: f64, end: f64 },
    /// `γ_k = a (b + k)^{−exponent}` with `γ_0 = start`, `γ_{N−1} = end`.
    Polynomial { start: f64, end: f64, exponent: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            StepSchedule::Constant { gamma } => {
                if !(gamma >= 0.0 && gamma.is_finite()) {
                    return Err(invalid("gamma", format!("must be nonnegative, got {gamma}")));
                }
            }
            StepSchedule::Geometric { start, end } => {
                if !(pos(start) && pos(end) && start >= end) {
                    return Err(invalid("gamma", format!("need start ≥ end > 0, got {start} → {end}")));
                }
            }
            StepSchedule::Polynomial { start, end, exponent } => {
                if !(pos(start) && pos(end) && start >= end) {
                    return Err(invalid("gamma", format!("need start ≥ end > 0, got {start} → {end}")));
                }
                if !pos(exponent) {
                    return Err(invalid("exponent", format!("must be positive, got {exponent}")));
                }
            }
        }
        Ok(())
    }

    /// `γ_k` for a run of `n_iters` steps.
    pub fn gamma(&self, k: usize, n_iters: usize) -> f64 {
        let last = n_iters.saturating_sub(1);
        match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::Geometric { start, end } => {
                if last == 0 || k == 0 {
                    start
                } else if k >= last {
                    end
                } else {
                    start * (end / start).powf(k as f64 / last as f64)
                }
            }
            StepSchedule::Polynomial { start, end, exponent } => {
                if last == 0 || k == 0 || start == end {
                    return start;
                }
                if k >= last {
                    return end;
                }
                let r = (start / end).powf(1.0 / exponent);
                let b = last as f64 / (r - 1.0);
                let a = start * b.powf(exponent);
                a * (b + k as f64).powf(-exponent)
            }
        }
    }

    /// Largest step of the schedule.
    pub fn max_gamma(&self) -> f64 {
        match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::Geometric { start, .. } | StepSchedule::Polynomial { start, .. } => start,
        }
    }
}

/// Materialized step sizes `γ_0, …, γ_{N−1}`.
pub fn make_schedule(schedule: &StepSchedule, n_iters: usize) -> Result<Vec<f64>> {
    schedule.validate()?;
    if n_iters == 0 {
        return Err(invalid("n_iters", "must be positive"));
    }
    Ok((0..n_iters).map(|k| schedule.gamma(k, n_iters)).collect())
}

/// Weighted annealing: `η_k = η_start^{1−k/n}` and geometric `τ_k` from
/// `tau_start` to `tau_end` over `n_anneal` steps, then `(1, tau_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annealing {
    pub eta_start: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub n_anneal: usize,
}

impl Annealing {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_end > 0.0 && self.tau_end.is_finite()) {
            return Err(Error::Instability { tau: self.tau_end });
        }
        if !(self.tau_start >= self.tau_end && self.tau_start.is_finite()) {
            return Err(invalid(
                "tau_start",
                format!("must be at least tau_end = {}, got {}", self.tau_end, self.tau_start),
            ));
        }
        if !(self.eta_start >= 1.0 && self.eta_start.is_finite()) {
            return Err(invalid("eta_start", format!("must be ≥ 1, got {}", self.eta_start)));
        }
        Ok(())
    }

    /// `(η_k, τ_k)`.
    pub fn at(&self, k: usize) -> (f64, f64) {
        if k >= self.n_anneal {
            return (1.0, self.tau_end);
        }
        let t = k as f64 / self.n_anneal as f64;
        (
            self.eta_start.powf(1.0 - t),
            self.tau_start * (self.tau_end / self.tau_start).powf(t),
        )
    }
}

pub fn make_annealing(
    eta_start: f64,
    tau_start: f64,
    tau_end: f64,
    n_anneal: usize,
) -> Result<Annealing> {
    let a = Annealing {
        eta_start,
        tau_start,
        tau_end,
        n_anneal,
    };
    a.validate()?;
    Ok(a)
}

fn default_ceiling() -> f64 {
    DEFAULT_DIVERGENCE_CEILING
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Operator-power exponent `α`.
    pub alpha: f64,
    pub schedule: StepSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annealing: Option<Annealing>,
    /// Diffusion time used when annealing is off.
    pub tau: f64,
    pub n_iters: usize,
    pub burn_in: usize,
    pub lag: usize,
    pub seed: u64,
    /// Minibatch size for stochastic likelihood gradients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic_batch: Option<usize>,
    #[serde(default = "default_ceiling")]
    pub divergence_ceiling: f64,
}

impl ChainConfig {
    /// Constant step, no annealing, full gradients.
    pub fn new(alpha: f64, gamma: f64, tau: f64, n_iters: usize, seed: u64) -> Self {
        Self {
            alpha,
            schedule: StepSchedule::Constant { gamma },
            annealing: None,
            tau,
            n_iters,
            burn_in: 0,
            lag: 1,
            seed,
            stochastic_batch: None,
            divergence_ceiling: DEFAULT_DIVERGENCE_CEILING,
        }
    }

    pub fn with_thinning(mut self, burn_in: usize, lag: usize) -> Self {
        self.burn_in = burn_in;
        self.lag = lag;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be positive, got {}", self.alpha)));
        }
        self.schedule.validate()?;
        if let Some(a) = &self.annealing {
            a.validate()?;
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Instability { tau: self.tau });
        }
        if self.n_iters == 0 {
            return Err(invalid("n_iters", "must be positive"));
        }
        if self.burn_in >= self.n_iters {
            return Err(invalid(
                "burn_in",
                format!("{} must be below n_iters = {}", self.burn_in, self.n_iters),
            ));
        }
        if self.lag == 0 {
            return Err(invalid("lag", "must be at least 1"));
        }
        if self.stochastic_batch == Some(0) {
            return Err(invalid("stochastic_batch", "must be at least 1"));
        }
        if !(self.divergence_ceiling > 0.0) {
            return Err(invalid("divergence_ceiling", "must be positive"));
        }
        Ok(())
    }

    /// `floor((n_iters − burn_in) / lag)`.
    pub fn expected_samples(&self) -> usize {
        (self.n_iters - self.burn_in) / self.lag
    }

    fn eta_tau(&self, k: usize) -> (f64, f64) {
        match &self.annealing {
            Some(a) => a.at(k),
            None => (1.0, self.tau),
        }
    }

    fn records(&self, k_after: usize) -> bool {
        k_after > self.burn_in && (k_after - self.burn_in) % self.lag == 0
    }
}

/// RNG for chain `chain_index` of a run seeded with `seed`.
pub fn chain_rng(seed: u64, chain_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_index);
    rng
}

/// Current iterate `X_k`, the counter `k` and the chain's RNG stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x: CoeffVec,
    pub k: usize,
    rng: ChaCha8Rng,
}

impl ChainState {
    pub fn new(x: CoeffVec, seed: u64, chain_index: u64) -> Self {
        Self {
            x,
            k: 0,
            rng: chain_rng(seed, chain_index),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            k: self.k,
            x: self.x.as_slice().to_vec(),
            rng_seed: self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        let bad = || invalid("checkpoint", "malformed RNG seed");
        if cp.rng_seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&cp.rng_seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let word_pos: u128 = cp
            .rng_word_pos
            .parse()
            .map_err(|_| invalid("checkpoint", "malformed RNG word position"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(cp.rng_stream);
        rng.set_word_pos(word_pos);
        Ok(Self {
            x: CoeffVec::new(cp.x.clone())?,
            k: cp.k,
            rng,
        })
    }
}

/// Everything needed to resume a chain bit-exactly: the iterate, the
/// counter and the ChaCha8 seed, stream and word position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub k: usize,
    pub x: Vec<f64>,
    /// 32-byte seed, lowercase hex.
    pub rng_seed: String,
    pub rng_stream: u64,
    /// Decimal, since the position is a 128-bit integer.
    pub rng_word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub config: ChainConfig,
    pub chain_index: u64,
    /// Produced by a reference run for ground-truth purposes.
    #[serde(default)]
    pub reference: bool,
}

/// Retained iterates after burn-in and thinning, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStore {
    dim: usize,
    data: Vec<f64>,
    iterations: Vec<usize>,
    pub meta: Option<StoreMeta>,
}

impl SampleStore {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            iterations: Vec::new(),
            meta: None,
        }
    }

    /// Store built from externally produced rows, e.g. direct draws.
    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<Self> {
        let mut store = Self::empty(dim);
        for (i, row) in rows.into_iter().enumerate() {
            check_dim(dim, row.len())?;
            store.push(i, &row);
        }
        Ok(store)
    }

    pub(crate) fn push(&mut self, iteration: usize, x: &[f64]) {
        self.data.extend_from_slice(x);
        self.iterations.push(iteration);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Iteration index `k` of each retained `X_k`.
    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }

    /// Series of coefficient `j` across samples.
    pub fn mode(&self, j: usize) -> Vec<f64> {
        self.samples().map(|s| s[j]).collect()
    }

    /// Keep only the first `dim` coefficients.
    pub fn truncated(&self, dim: usize) -> Result<Self> {
        if dim == 0 || dim > self.dim {
            return Err(Error::InvalidDimension(format!(
                "cannot truncate {} modes to {dim}",
                self.dim
            )));
        }
        let mut out = Self::empty(dim);
        for (s, &k) in self.samples().zip(&self.iterations) {
            out.push(k, &s[..dim]);
        }
        out.meta = self.meta.clone();
        Ok(out)
    }

    /// Concatenation of independent chains; metadata of the first is kept.
    pub fn merge(stores: &[SampleStore]) -> Result<Self> {
        let first = stores
            .first()
            .ok_or_else(|| invalid("stores", "nothing to merge"))?;
        let mut out = Self::empty(first.dim);
        out.meta = first.meta.clone();
        for s in stores {
            check_dim(first.dim, s.dim)?;
            out.data.extend_from_slice(&s.data);
            out.iterations.extend_from_slice(&s.iterations);
        }
        Ok(out)
    }
}

/// `1/(√128 · Tr(C^α) · L)`.
pub fn max_step_size(trace_c_alpha: f64, lipschitz: f64) -> Result<f64> {
    if !(trace_c_alpha > 0.0) {
        return Err(invalid("trace", format!("must be positive, got {trace_c_alpha}")));
    }
    if !(lipschitz > 0.0) {
        return Err(invalid("lipschitz", format!("must be positive, got {lipschitz}")));
    }
    Ok(1.0 / (128f64.sqrt() * trace_c_alpha * lipschitz))
}

/// `L = max{√(Tr(C^{α−2}) L_τ² + Tr(C^α) L_Φ0²), L_Φ0}`, or `None` when
/// `∇Φ0` has no known global Lipschitz constant or `C^{α−2}` is singular.
pub fn combined_lipschitz<S: Score + ?Sized>(
    score: &S,
    spec: &PosteriorSpec,
    alpha: f64,
    tau: f64,
) -> Option<f64> {
    let l_phi = spec.likelihood.lipschitz_bound()?;
    let c = score.operator();
    if alpha < 2.0 && !c.is_strictly_positive() {
        return None;
    }
    let l_tau = score.lipschitz(tau);
    let l_g = (trace_power(c, alpha - 2.0) * l_tau * l_tau + trace_power(c, alpha) * l_phi * l_phi)
        .sqrt();
    Some(l_g.max(l_phi))
}

/// Per-run constants of the recursion.
struct Kernel<'a, S: Score + ?Sized> {
    cfg: &'a ChainConfig,
    score: &'a S,
    spec: &'a PosteriorSpec,
    c_alpha_m1: Vec<f64>,
    c_alpha: Vec<f64>,
    noise_sd: Vec<f64>,
    with_noise: bool,
    score_buf: Vec<f64>,
    grad_buf: Vec<f64>,
}

struct Diverged {
    iteration: usize,
    norm: f64,
}

impl<'a, S: Score + ?Sized> Kernel<'a, S> {
    fn new(cfg: &'a ChainConfig, score: &'a S, spec: &'a PosteriorSpec) -> Result<Self> {
        cfg.validate()?;
        let c = score.operator();
        check_dim(spec.dim(), c.dim())?;
        if let Some(b) = cfg.stochastic_batch {
            let n = spec.likelihood.n_components();
            if b > n {
                return Err(invalid(
                    "stochastic_batch",
                    format!("{b} exceeds the {n} likelihood components"),
                ));
            }
        }
        let c_alpha = c.powers(cfg.alpha)?;
        let noise_sd = c_alpha.iter().map(|v| v.sqrt()).collect();
        let dim = c.dim();
        Ok(Self {
            cfg,
            score,
            spec,
            c_alpha_m1: c.powers(cfg.alpha - 1.0)?,
            c_alpha,
            noise_sd,
            with_noise: true,
            score_buf: vec![0.0; dim],
            grad_buf: vec![0.0; dim],
        })
    }

    fn step(&mut self, state: &mut ChainState) -> std::result::Result<(), Diverged> {
        let k = state.k;
        let gamma = self.cfg.schedule.gamma(k, self.cfg.n_iters);
        let (eta, tau) = self.cfg.eta_tau(k);
        let x = state.x.as_mut_slice();

        self.score.eval_into(tau, x, &mut self.score_buf);
        match self.cfg.stochastic_batch {
            None => self.spec.likelihood.grad_log_into(x, &mut self.grad_buf),
            Some(b) => {
                let lik = &self.spec.likelihood;
                let n = lik.n_components();
                let subset = draw_subset(n, b, &mut state.rng);
                self.grad_buf.iter_mut().for_each(|g| *g = 0.0);
                for i in subset {
                    lik.add_component_grad_log(i, x, &mut self.grad_buf);
                }
                let scale = n as f64 / b as f64;
                self.grad_buf.iter_mut().for_each(|g| *g *= scale);
            }
        }

        let diffusion = (2.0 * gamma).sqrt();
        let mut norm2 = 0.0;
        for j in 0..x.len() {
            let drift = self.c_alpha_m1[j] * eta * self.score_buf[j] + self.c_alpha[j] * self.grad_buf[j];
            let mut next = x[j] + gamma * drift;
            if self.with_noise {
                let z: f64 = state.rng.sample(StandardNormal);
                next += diffusion * self.noise_sd[j] * z;
            }
            x[j] = next;
            norm2 += next * next;
        }
        state.k += 1;
        let norm = norm2.sqrt();
        if !(norm <= self.cfg.divergence_ceiling) {
            return Err(Diverged {
                iteration: state.k,
                norm,
            });
        }
        Ok(())
    }
}

fn check_state(state: &ChainState) -> Result<()> {
    if !state.x.is_finite() {
        return Err(Error::NonFinite("chain state"));
    }
    Ok(())
}

/// One update `X_k → X_{k+1}`.
pub fn step<S: Score + ?Sized>(
    state: &mut ChainState,
    cfg: &ChainConfig,
    score: &S,
    spec: &PosteriorSpec,
) -> Result<()> {
    check_state(state)?;
    let mut kernel = Kernel::new(cfg, score, spec)?;
    check_dim(spec.dim(), state.x.dim())?;
    kernel.step(state).map_err(|d| Error::ChainDivergence {
        iteration: d.iteration,
        norm: d.norm,
        partial: Box::new(SampleStore::empty(state.x.dim())),
    })
}

#[cfg(test)]
fn step_noiseless<S: Score + ?Sized>(
    state: &mut ChainState,
    cfg: &ChainConfig,
    score: &S,
    spec: &PosteriorSpec,
) -> Result<()> {
    let mut kernel = Kernel::new(cfg, score, spec)?;
    kernel.with_noise = false;
    kernel.step(state).map_err(|d| Error::ChainDivergence {
        iteration: d.iteration,
        norm: d.norm,
        partial: Box::new(SampleStore::empty(state.x.dim())),
    })
}

fn warn_on_cap<S: Score + ?Sized>(cfg: &ChainConfig, score: &S, spec: &PosteriorSpec) {
    let tau = cfg.annealing.map_or(cfg.tau, |a| a.tau_end.min(cfg.tau));
    let trace = trace_power(score.operator(), cfg.alpha);
    match combined_lipschitz(score, spec, cfg.alpha, tau) {
        Some(l) if l > 0.0 => {
            if let Ok(cap) = max_step_size(trace, l) {
                let g = cfg.schedule.max_gamma();
                if g > cap {
                    log::warn!("step size {g} exceeds the convergence-theory cap {cap:.3e}");
                }
            }
        }
        Some(_) => {}
        None => log::info!("no global Lipschitz constant available; step-size cap not checked"),
    }
}

/// Continues `state` until `cfg.n_iters`, calling `observe(k, X_k)` after
/// every step and recording thinned samples.
pub fn run_chain_observed<S, F>(
    cfg: &ChainConfig,
    score: &S,
    spec: &PosteriorSpec,
    mut state: ChainState,
    chain_index: u64,
    observe: F,
) -> Result<SampleStore>
where
    S: Score + ?Sized,
    F: FnMut(usize, &[f64]),
{
    advance_chain(cfg, score, spec, &mut state, chain_index, observe)
}

/// As [`run_chain_observed`], leaving `state` at the last completed step so
/// it can be checkpointed.
pub fn advance_chain<S, F>(
    cfg: &ChainConfig,
    score: &S,
    spec: &PosteriorSpec,
    state: &mut ChainState,
    chain_index: u64,
    mut observe: F,
) -> Result<SampleStore>
where
    S: Score + ?Sized,
    F: FnMut(usize, &[f64]),
{
    check_state(state)?;
    let mut kernel = Kernel::new(cfg, score, spec)?;
    check_dim(spec.dim(), state.x.dim())?;
    let mut store = SampleStore::empty(state.x.dim());
    store.meta = Some(StoreMeta {
        config: cfg.clone(),
        chain_index,
        reference: false,
    });
    if state.k == 0 {
        warn_on_cap(cfg, score, spec);
    }
    while state.k < cfg.n_iters {
        if let Err(d) = kernel.step(state) {
            return Err(Error::ChainDivergence {
                iteration: d.iteration,
                norm: d.norm,
                partial: Box::new(store),
            });
        }
        observe(state.k, state.x.as_slice());
        if cfg.records(state.k) {
            store.push(state.k, state.x.as_slice());
        }
    }
    Ok(store)
}

/// Runs chain 0 of `cfg.seed` from `init` for `cfg.n_iters` steps.
pub fn run_chain<S: Score + ?Sized>(
    cfg: &ChainConfig,
    score: &S,
    spec: &PosteriorSpec,
    init: CoeffVec,
) -> Result<SampleStore> {
    run_chain_indexed(cfg, score, spec, init, 0)
}

pub fn run_chain_indexed<S: Score + ?Sized>(
    cfg: &ChainConfig,
    score: &S,
    spec: &PosteriorSpec,
    init: CoeffVec,
    chain_index: u64,
) -> Result<SampleStore> {
    let state = ChainState::new(init, cfg.seed, chain_index);
    run_chain_observed(cfg, score, spec, state, chain_index, |_, _| {})
}

/// Independent chains in parallel; chain `i` starts at `inits[i]` and uses
/// RNG stream `i` of `cfg.seed`.
pub fn run_chains<S: Score + ?Sized>(
    cfg: &ChainConfig,
    score: &S,
    spec: &PosteriorSpec,
    inits: Vec<CoeffVec>,
) -> Vec<Result<SampleStore>> {
    inits
        .into_par_iter()
        .enumerate()
        .map(|(i, init)| run_chain_indexed(cfg, score, spec, init, i as u64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{ForwardProblem, Likelihood, NoiseModel, Operator};
    use crate::score::ScoreModel;
    use crate::spectral::{GaussianMeasure, SpectralOperator};
    use proptest::prelude::*;

    fn cv(v: &[f64]) -> CoeffVec {
        CoeffVec::new(v.to_vec()).unwrap()
    }

    fn prior_only(dim: usize) -> (ScoreModel, PosteriorSpec) {
        let c = SpectralOperator::identity(dim);
        let score = ScoreModel::exact(c.clone(), c.clone()).unwrap();
        let lik = ForwardProblem::new(
            Operator::Zero { d0: 1, n_obs: 1 },
            NoiseModel::gaussian(1.0).unwrap(),
            vec![0.0],
        )
        .unwrap();
        let spec = PosteriorSpec::new(GaussianMeasure::centered(c), Likelihood::Forward(lik)).unwrap();
        (score, spec)
    }

    fn mode_obs(dim: usize, d0: usize, y: Vec<f64>) -> (ScoreModel, PosteriorSpec) {
        let c = SpectralOperator::identity(dim);
        let score = ScoreModel::exact(c.clone(), c.clone()).unwrap();
        let lik = ForwardProblem::new(
            Operator::ModeObservation { d0 },
            NoiseModel::gaussian(1.0).unwrap(),
            y,
        )
        .unwrap();
        let spec = PosteriorSpec::new(GaussianMeasure::centered(c), Likelihood::Forward(lik)).unwrap();
        (score, spec)
    }

    #[test]
    fn noiseless_step_contracts() {
        let (score, spec) = prior_only(2);
        // Exact score with C = C_μ0 is -x at every τ.
        let cfg = ChainConfig::new(1.0, 0.5, 0.3, 10, 0);
        let mut st = ChainState::new(cv(&[2.0, 0.0]), 0, 0);
        step_noiseless(&mut st, &cfg, &score, &spec).unwrap();
        assert_eq!(st.x, cv(&[1.0, 0.0]));
        assert_eq!(st.k, 1);
    }

    #[test]
    fn zero_step_only_advances_counter() {
        let (score, spec) = mode_obs(3, 2, vec![1.0, -1.0]);
        let cfg = ChainConfig::new(1.0, 0.0, 0.1, 10, 3);
        let x0 = cv(&[0.4, -0.2, 1.0]);
        let mut st = ChainState::new(x0.clone(), 3, 0);
        step(&mut st, &cfg, &score, &spec).unwrap();
        assert_eq!(st.x, x0);
        assert_eq!(st.k, 1);
    }

    #[test]
    fn divergence_carries_iteration() {
        let (score, spec) = prior_only(2);
        let mut cfg = ChainConfig::new(1.0, 0.01, 0.1, 100, 0);
        cfg.divergence_ceiling = 1.0;
        let err = run_chain(&cfg, &score, &spec, cv(&[5.0, 0.0])).unwrap_err();
        match err {
            Error::ChainDivergence { iteration, norm, partial } => {
                assert_eq!(iteration, 1);
                assert!(norm > 1.0);
                assert!(partial.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sample_counts() {
        let (score, spec) = prior_only(1);
        let cfg = ChainConfig::new(1.0, 0.01, 0.1, 10, 1);
        assert_eq!(run_chain(&cfg, &score, &spec, cv(&[0.0])).unwrap().len(), 10);

        let cfg = ChainConfig::new(1.0, 0.01, 0.1, 100_000, 1).with_thinning(1000, 20);
        let store = run_chain(&cfg, &score, &spec, cv(&[0.0])).unwrap();
        assert_eq!(store.len(), 4950);
        assert_eq!(store.len(), cfg.expected_samples());
        assert_eq!(store.iterations()[0], 1020);
        assert_eq!(*store.iterations().last().unwrap(), 100_000);
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let (score, spec) = mode_obs(4, 2, vec![0.3, 1.2]);
        let cfg = ChainConfig::new(1.0, 0.05, 0.01, 2000, 42).with_thinning(100, 3);
        let a = run_chain(&cfg, &score, &spec, cv(&[0.0; 4])).unwrap();
        let b = run_chain(&cfg, &score, &spec, cv(&[0.0; 4])).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 43;
        assert_ne!(a, run_chain(&other, &score, &spec, cv(&[0.0; 4])).unwrap());
    }

    #[test]
    fn checkpoint_resumes_bit_exactly() {
        let (score, spec) = mode_obs(3, 2, vec![0.5, -0.5]);
        let mut cfg = ChainConfig::new(1.0, 0.05, 0.01, 500, 9);
        cfg.stochastic_batch = Some(1);
        let full = run_chain(&cfg, &score, &spec, cv(&[0.0; 3])).unwrap();

        let mut st = ChainState::new(cv(&[0.0; 3]), 9, 0);
        let mut head = Vec::new();
        for _ in 0..137 {
            step(&mut st, &cfg, &score, &spec).unwrap();
            head.push(st.x.as_slice().to_vec());
        }
        let text = serde_json::to_string(&st.checkpoint()).unwrap();
        let restored = ChainState::from_checkpoint(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(restored, st);
        let tail = run_chain_observed(&cfg, &score, &spec, restored, 0, |_, _| {}).unwrap();
        for (i, row) in head.iter().enumerate() {
            assert_eq!(full.sample(i), row.as_slice());
        }
        for i in 0..tail.len() {
            assert_eq!(full.sample(137 + i), tail.sample(i));
        }
    }

    #[test]
    fn parallel_chains_match_sequential() {
        let (score, spec) = mode_obs(2, 1, vec![1.0]);
        let cfg = ChainConfig::new(1.0, 0.05, 0.01, 300, 5);
        let inits = vec![cv(&[0.0, 0.0]), cv(&[1.0, 1.0]), cv(&[-1.0, 0.5])];
        let par = run_chains(&cfg, &score, &spec, inits.clone());
        for (i, (p, init)) in par.into_iter().zip(inits).enumerate() {
            let seq = run_chain_indexed(&cfg, &score, &spec, init, i as u64).unwrap();
            assert_eq!(p.unwrap(), seq);
        }
    }

    #[test]
    fn high_modes_ignore_observation() {
        let (score, spec_a) = mode_obs(5, 2, vec![3.0, -2.0]);
        let (_, spec_b) = mode_obs(5, 2, vec![-1.0, 0.7]);
        let cfg = ChainConfig::new(1.0, 0.05, 0.01, 400, 8);
        let a = run_chain(&cfg, &score, &spec_a, cv(&[0.0; 5])).unwrap();
        let b = run_chain(&cfg, &score, &spec_b, cv(&[0.0; 5])).unwrap();
        for j in 2..5 {
            assert_eq!(a.mode(j), b.mode(j));
        }
        assert_ne!(a.mode(0), b.mode(0));
    }

    #[test]
    fn prior_only_variance_is_one() {
        let (score, spec) = prior_only(2);
        let cfg = ChainConfig::new(1.0, 1e-2, 0.1, 1_000_000, 77);
        let store = run_chain(&cfg, &score, &spec, cv(&[0.0, 0.0])).unwrap();
        // Discretized OU: x' = (1−γ)x + √(2γ)z has stationary variance 2γ/(1−(1−γ)²) = 2/(2−γ).
        let stationary = 2.0 / (2.0 - 1e-2);
        for j in 0..2 {
            let s = store.mode(j);
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            // AR(1) with ρ = 1−γ: the squared series has integrated autocorrelation (1+ρ²)/(1−ρ²).
            let rho: f64 = 1.0 - 1e-2;
            let tau_int = (1.0 + rho * rho) / (1.0 - rho * rho);
            let se = (2.0 * stationary * stationary * tau_int / n).sqrt();
            assert!((var - stationary).abs() < 3.0 * se, "mode {j}: {var} vs {stationary} ± {se}");
            assert!((var - 1.0).abs() < 3.0 * se + (stationary - 1.0));
        }
    }

    #[test]
    fn schedule_examples() {
        let g = make_schedule(&StepSchedule::Geometric { start: 4.0, end: 0.05 }, 100_000).unwrap();
        assert_eq!(g[0], 4.0);
        assert_eq!(g[99_999], 0.05);
        assert!(g.windows(2).all(|w| w[1] <= w[0]));

        let c = make_schedule(&StepSchedule::Constant { gamma: 0.01 }, 17).unwrap();
        assert!(c.iter().all(|&v| v == 0.01));

        let p = StepSchedule::Polynomial { start: 1e-3, end: 1e-4, exponent: 0.55 };
        let n = 5000;
        // Endpoints through the interior formula, not the clamps.
        let r = (1e-3f64 / 1e-4).powf(1.0 / 0.55);
        let b = (n - 1) as f64 / (r - 1.0);
        let a = 1e-3 * b.powf(0.55);
        assert!((a * b.powf(-0.55) - 1e-3).abs() < 1e-12);
        assert!((a * (b + (n - 1) as f64).powf(-0.55) - 1e-4).abs() < 1e-12);
        let seq = make_schedule(&p, n).unwrap();
        assert_eq!(seq[0], 1e-3);
        assert_eq!(seq[n - 1], 1e-4);
        assert!((seq[n - 2] - a * (b + (n - 2) as f64).powf(-0.55)).abs() < 1e-18);

        assert!(make_schedule(&StepSchedule::Geometric { start: 0.01, end: 0.1 }, 10).is_err());
        assert!(make_schedule(&StepSchedule::Constant { gamma: -1.0 }, 10).is_err());
    }

    #[test]
    fn annealing_examples() {
        let flat = make_annealing(1.0, 0.1, 0.1, 50).unwrap();
        for k in 0..100 {
            assert_eq!(flat.at(k), (1.0, 0.1));
        }
        let a = make_annealing(4.0, 1.0, 0.01, 2).unwrap();
        let etas: Vec<f64> = (0..5).map(|k| a.at(k).0).collect();
        assert_eq!(etas, vec![4.0, 2.0, 1.0, 1.0, 1.0]);
        assert_eq!(a.at(2), (1.0, 0.01));
        assert_eq!(a.at(1000), (1.0, 0.01));
        assert!(matches!(make_annealing(2.0, 1.0, 0.0, 5), Err(Error::Instability { .. })));
        assert!(make_annealing(0.5, 1.0, 0.1, 5).is_err());
        assert!(make_annealing(2.0, 0.01, 0.1, 5).is_err());
    }

    #[test]
    fn step_cap_examples() {
        assert!((max_step_size(1.0, 1.0).unwrap() - 0.0883883).abs() < 1e-7);
        assert!((max_step_size(2.0, 1.0).unwrap() - 0.0441942).abs() < 1e-7);
        assert!(max_step_size(1.0, 1e300).unwrap() < 1e-300);
        assert!(max_step_size(0.0, 1.0).is_err());
        assert!(max_step_size(1.0, -1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = ChainConfig::new(1.0, 0.01, 0.1, 100, 0);
        assert!(ok.validate().is_ok());
        assert!(ok.clone().with_thinning(100, 1).validate().is_err());
        assert!(ok.clone().with_thinning(0, 0).validate().is_err());
        let mut bad = ok.clone();
        bad.tau = 0.0;
        assert!(matches!(bad.validate(), Err(Error::Instability { .. })));
        let mut bad = ok;
        bad.alpha = 0.0;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn geometric_schedule_endpoints(start in 1e-4f64..10.0, ratio in 1.0f64..1e3, n in 2usize..5000) {
            let end = start / ratio;
            let s = StepSchedule::Geometric { start, end };
            prop_assert_eq!(s.gamma(0, n), start);
            prop_assert_eq!(s.gamma(n - 1, n), end);
            for k in [1, n / 2, n - 2] {
                let g = s.gamma(k, n);
                prop_assert!(g <= start * (1.0 + 1e-12) && g >= end * (1.0 - 1e-12));
            }
        }

        #[test]
        fn annealing_monotone(eta in 1.0f64..10.0, t0 in 1e-3f64..1.0, shrink in 1.0f64..100.0, n in 1usize..200) {
            let a = make_annealing(eta, t0, t0 / shrink, n).unwrap();
            let mut prev = a.at(0);
            for k in 1..(n + 5) {
                let cur = a.at(k);
                prop_assert!(cur.0 <= prev.0 * (1.0 + 1e-12) && cur.0 >= 1.0);
                prop_assert!(cur.1 <= prev.1 * (1.0 + 1e-12));
                prev = cur;
            }
            prop_assert_eq!(prev, (1.0, t0 / shrink));
        }
    }
}
