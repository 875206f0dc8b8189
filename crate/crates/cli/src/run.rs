//! Single experiment runs: chains, diagnostics and output files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use funclangevin::diagnostics::{
    ensemble_fisher_trajectory, estimate_mismatch_constant, fit_diag_gaussian, gaussian_kl,
    gaussian_relative_fisher, grid_kl, moments, oracle_deltas, theorem1_bound, time_averaged, BoundParams,
    DiagnosticsReport,
};
use funclangevin::oracle::{step_size_cap, DiagGaussian};
use funclangevin::sampler::{advance_chain, chain_rng, ChainState, Checkpoint, SampleStore};
use funclangevin::score::Score;
use funclangevin::spectral::{sample_gaussian, trace_power, CoeffVec};
use rayon::prelude::*;

use crate::config::{Experiment, ExperimentConfig, InitKind, ManifestSection, Truth};
use crate::error::{io_err, CliError};

pub const OUT_DIR_ENV: &str = "FUNCLANGEVIN_OUT_DIR";
pub const THREADS_ENV: &str = "FUNCLANGEVIN_THREADS";

/// Fixed stream for the prior draws probing the score mismatch, so the
/// estimated constant depends only on the problem.
const PROBE_SEED: u64 = 0x70726f6265;

/// Default histogram resolution per axis for grid-KL.
pub const DEFAULT_GRID_KL_BINS: usize = 32;

/// Process-level overrides read from the environment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Environment {
    pub out_dir: Option<String>,
    pub threads: Option<usize>,
}

impl Environment {
    pub fn from_env() -> Result<Self, CliError> {
        let out_dir = std::env::var(OUT_DIR_ENV).ok().filter(|s| !s.is_empty());
        let threads = match std::env::var(THREADS_ENV) {
            Ok(s) if !s.is_empty() => Some(s.parse::<usize>().ok().filter(|n| *n > 0).ok_or_else(|| {
                CliError::Config {
                    path: THREADS_ENV.into(),
                    message: format!("expected a positive integer, got {s:?}"),
                }
            })?),
            _ => None,
        };
        Ok(Self { out_dir, threads })
    }

    pub fn resolve_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        PathBuf::from(self.out_dir.as_deref().unwrap_or(&cfg.output.dir))
    }

    /// Runs `f` on a pool sized by the thread override, or the global pool.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
        match self.threads {
            None => Ok(f()),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(|pool| pool.install(f))
                .map_err(|e| CliError::Output(format!("cannot start {n} threads: {e}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub chain: usize,
    pub iteration: usize,
    pub norm: f64,
}

/// Everything a run produces, before it is written anywhere.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// One store per chain; partial for a diverged chain.
    pub stores: Vec<SampleStore>,
    /// End-of-run state per completed chain.
    pub checkpoints: Vec<Option<Checkpoint>>,
    pub divergence: Option<Divergence>,
    pub report: DiagnosticsReport,
    /// Observation used by the likelihood, after any synthesis.
    pub y: Vec<f64>,
}

/// Runs every chain of the experiment and computes its diagnostics.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let exp = cfg.build()?;
    let results: Vec<_> = exp
        .inits
        .par_iter()
        .enumerate()
        .map(|(i, init)| {
            let mut state = ChainState::new(init.clone(), exp.chain.seed, i as u64);
            match advance_chain(&exp.chain, &exp.score, &exp.spec, &mut state, i as u64, |_, _| {}) {
                Ok(store) => Ok((store, Some(state.checkpoint()), None)),
                Err(funclangevin::Error::ChainDivergence { iteration, norm, partial }) => Ok((
                    *partial,
                    None,
                    Some(Divergence {
                        chain: i,
                        iteration,
                        norm,
                    }),
                )),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut stores = Vec::with_capacity(results.len());
    let mut checkpoints = Vec::with_capacity(results.len());
    let mut divergence = None;
    for r in results {
        let (store, cp, div) = r?;
        stores.push(store);
        checkpoints.push(cp);
        divergence = divergence.or(div);
    }
    let report = analyze(cfg, &exp, &stores, divergence);
    let y = match &exp.spec.likelihood {
        funclangevin::forward::Likelihood::Forward(p) => p.y.clone(),
        funclangevin::forward::Likelihood::Rosenbrock(_) => Vec::new(),
    };
    Ok(RunOutput {
        stores,
        checkpoints,
        divergence,
        report,
        y,
    })
}

/// Diffusion time in force once any annealing has finished.
pub fn final_tau(exp: &Experiment) -> f64 {
    exp.chain.annealing.map_or(exp.chain.tau, |a| a.tau_end)
}

fn note(report: &mut DiagnosticsReport, key: &str, value: impl ToString) {
    report.metadata.insert(key.into(), value.to_string());
}

/// Diagnostics for a finished run. Failures of individual diagnostics are
/// recorded in the metadata rather than aborting.
pub fn analyze(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    stores: &[SampleStore],
    divergence: Option<Divergence>,
) -> DiagnosticsReport {
    let mut report = DiagnosticsReport::default();
    note(&mut report, "tool_version", env!("CARGO_PKG_VERSION"));
    note(&mut report, "seed", exp.chain.seed);
    note(&mut report, "chains", stores.len());
    note(&mut report, "dim", exp.spec.dim());
    note(&mut report, "expected_samples_per_chain", exp.chain.expected_samples());
    if let Some(d) = divergence {
        note(&mut report, "diverged", format!("chain {} at iteration {}", d.chain, d.iteration));
    }
    let merged = match SampleStore::merge(stores) {
        Ok(m) => m,
        Err(e) => {
            note(&mut report, "samples_error", e);
            return report;
        }
    };
    note(&mut report, "samples", merged.len());
    let tau = final_tau(exp);
    let alpha = exp.chain.alpha;

    match moments(&merged) {
        Ok(m) => report.moments = Some(m),
        Err(e) => note(&mut report, "moments_error", e),
    }

    let truth = if cfg.diagnostics.oracle { exp.truth() } else { None };
    match &truth {
        Some(Truth::Gaussian(post)) => {
            if let Some(m) = &report.moments {
                match oracle_deltas(m, post) {
                    Ok(d) => report.oracle_deltas = Some(d),
                    Err(e) => note(&mut report, "oracle_error", e),
                }
            }
            match fit_diag_gaussian(&merged)
                .and_then(|fit| gaussian_relative_fisher(&fit, post, exp.score.c(), alpha))
            {
                Ok(f) => report.fisher_gaussian_fit = Some(f),
                Err(e) => note(&mut report, "fisher_error", e),
            }
        }
        Some(Truth::Grid(grid)) => {
            let bins = cfg.diagnostics.grid_kl_bins.unwrap_or(DEFAULT_GRID_KL_BINS);
            match grid_kl(&merged, grid, bins) {
                Ok(k) => report.grid_kl = Some(k),
                Err(e) => note(&mut report, "grid_kl_error", e),
            }
        }
        None if cfg.diagnostics.oracle => note(&mut report, "oracle", "none available for this problem"),
        None => {}
    }

    let mut rng = chain_rng(PROBE_SEED, 0);
    let probes: Vec<CoeffVec> = (0..cfg.diagnostics.mismatch_probes.max(1))
        .map(|_| sample_gaussian(&exp.spec.prior, &mut rng))
        .collect();
    match estimate_mismatch_constant(exp.score.c(), exp.score.c_mu0(), &probes, tau) {
        Ok(k) => report.mismatch_constant = Some(k),
        Err(e) => note(&mut report, "mismatch_error", e),
    }

    if cfg.diagnostics.bound {
        match bound_params(cfg, exp, truth.as_ref(), &report) {
            Ok(p) => match theorem1_bound(&p) {
                Ok(b) => {
                    if !b.gamma_valid {
                        note(&mut report, "bound_warning", "step size exceeds the cap; bound not guaranteed");
                    }
                    note(&mut report, "bound_gamma", p.gamma);
                    note(&mut report, "bound_kl0", p.kl0);
                    note(&mut report, "bound_lipschitz", p.lipschitz);
                    report.bound = Some(b);
                }
                Err(e) => note(&mut report, "bound_error", e),
            },
            Err(reason) => note(&mut report, "bound_skipped", reason),
        }
    }
    report
}

fn bound_params(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    truth: Option<&Truth>,
    report: &DiagnosticsReport,
) -> Result<BoundParams, String> {
    let tau = final_tau(exp);
    let alpha = exp.chain.alpha;
    let kl0 = match (cfg.diagnostics.kl0, cfg.sampler.init, truth) {
        (Some(k), _, _) => k,
        (None, InitKind::PriorDraw, Some(Truth::Gaussian(post))) => {
            let prior = DiagGaussian::new(
                exp.spec.prior.mean.as_slice().to_vec(),
                exp.spec.prior.covariance.eigenvalues().to_vec(),
            )
            .map_err(|e| e.to_string())?;
            gaussian_kl(&prior, post).map_err(|e| e.to_string())?
        }
        _ => return Err("needs diagnostics.kl0 unless init = \"prior_draw\" with a Gaussian oracle".into()),
    };
    let c = exp.score.c();
    let cap = step_size_cap(&exp.spec, &exp.score, alpha, tau).map_err(|e| e.to_string())?;
    let trace_c_alpha = trace_power(c, alpha);
    let lipschitz = 1.0 / (128f64.sqrt() * trace_c_alpha * cap);
    let k_mismatch = report
        .mismatch_constant
        .as_ref()
        .map(|m| m.k)
        .ok_or("mismatch constant unavailable")?;
    Ok(BoundParams {
        kl0,
        n_iters: exp.chain.n_iters as f64,
        gamma: exp.chain.schedule.max_gamma(),
        trace_c_alpha,
        trace_c_alpha_minus_2: trace_power(c, alpha - 2.0),
        lipschitz,
        k_mismatch,
        tau,
        eps_tau: exp.score.error_bound(tau),
    })
}

/// Time-averaged relative Fisher information of an ensemble started from
/// prior draws, against a Gaussian oracle.
pub fn ensemble_error(exp: &Experiment, post: &DiagGaussian) -> Result<f64, CliError> {
    let traj = ensemble_fisher_trajectory(&exp.chain, &exp.score, &exp.spec, &exp.spec.prior, exp.inits.len(), post)?;
    Ok(time_averaged(&traj, exp.chain.n_iters)?)
}

/// Files written by [`write_outputs`].
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const DIVERGED_FILE: &str = "DIVERGED";

pub fn manifest(cfg: &ExperimentConfig, env: &Environment, dir: &Path, y: &[f64]) -> ExperimentConfig {
    let mut m = cfg.clone();
    m.output.dir = dir.display().to_string();
    m.manifest = Some(ManifestSection {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.sampler.seed,
        chain_streams: (0..cfg.sampler.chains as u64).collect(),
        output_dir: dir.display().to_string(),
        out_dir_env: env.out_dir.clone(),
        threads_env: env.threads,
        y: y.to_vec(),
    });
    m
}

pub fn write_samples(path: &Path, stores: &[SampleStore]) -> Result<(), CliError> {
    let dim = stores.first().map_or(0, |s| s.dim());
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "# funclangevin samples")?;
        writeln!(w, "# iteration: step index k of the retained state X_k")?;
        writeln!(w, "# x1..x{dim}: coefficients of X_k in the eigenbasis, mode 1 first")?;
        writeln!(w, "# chains are concatenated; each block starts with a '# chain <index>' line")?;
        let header: Vec<String> = std::iter::once("iteration".to_string())
            .chain((1..=dim).map(|j| format!("x{j}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (c, store) in stores.iter().enumerate() {
            writeln!(w, "# chain {c}")?;
            for (k, row) in store.iterations().iter().zip(store.samples()) {
                write!(w, "{k}")?;
                for v in row {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

/// Reads a samples file back as `(iteration, coefficients)` rows.
pub fn read_samples(path: &Path) -> Result<Vec<(usize, Vec<f64>)>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Output(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        let bad = |what: &str| CliError::Output(format!("{}: row {i}: bad {what}", path.display()));
        let mut fields = rec.iter();
        let k = fields.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("iteration"))?;
        let x = fields.map(|s| s.parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad("value"))?;
        rows.push((k, x));
    }
    Ok(rows)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes every output of a run into `dir`. A diverged run also gets a
/// `DIVERGED` marker.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    env: &Environment,
    out: &RunOutput,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    if cfg.output.samples {
        write_samples(&dir.join(SAMPLES_FILE), &out.stores)?;
    }
    let summary = serde_json::to_string_pretty(&out.report)
        .map_err(|e| CliError::Output(format!("cannot serialize summary: {e}")))?;
    write_text(&dir.join(SUMMARY_FILE), &summary)?;
    write_text(&dir.join(MANIFEST_FILE), &manifest(cfg, env, dir, &out.y).to_toml()?)?;
    if cfg.output.checkpoints {
        let cp_dir = dir.join("checkpoints");
        fs::create_dir_all(&cp_dir).map_err(io_err(&cp_dir))?;
        for (i, cp) in out.checkpoints.iter().enumerate() {
            if let Some(cp) = cp {
                let text = serde_json::to_string_pretty(cp)
                    .map_err(|e| CliError::Output(format!("cannot serialize checkpoint: {e}")))?;
                write_text(&cp_dir.join(format!("chain_{i}.json")), &text)?;
            }
        }
    }
    let marker = dir.join(DIVERGED_FILE);
    match out.divergence {
        Some(d) => write_text(
            &marker,
            &format!("chain {} diverged at iteration {} with norm {:e}\n", d.chain, d.iteration, d.norm),
        )?,
        None if marker.exists() => fs::remove_file(&marker).map_err(io_err(&marker))?,
        None => {}
    }
    Ok(())
}

/// `run` subcommand: execute, write, and report divergence as an error
/// after the partial outputs are on disk.
pub fn run(cfg: &ExperimentConfig, env: &Environment) -> Result<(PathBuf, RunOutput), CliError> {
    let dir = env.resolve_dir(cfg);
    let out = env.install(|| execute(cfg))??;
    write_outputs(&dir, cfg, env, &out)?;
    if let Some(d) = out.divergence {
        return Err(CliError::Diverged {
            chain: d.chain,
            iteration: d.iteration,
            norm: d.norm,
            dir: dir.display().to_string(),
        });
    }
    Ok((dir, out))
}
