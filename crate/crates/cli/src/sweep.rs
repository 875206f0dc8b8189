//! One-axis parameter sweeps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use funclangevin::diagnostics::{rate_fit, BoundDecomposition, DiagnosticsReport};
use funclangevin::sampler::{chain_rng, StepSchedule};
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, InitKind, ScoreKindName, SweepAxis, SweepSection, Truth};
use crate::error::{io_err, CliError};
use crate::run::{ensemble_error, execute, final_tau, manifest, Environment, MANIFEST_FILE, SUMMARY_FILE};

/// Separates sweep seeds from chain and initial-draw streams.
const SWEEP_SALT: u64 = 0x7377_6565_70;

pub const SWEEP_FILE: &str = "sweep.csv";

/// Seed of run `index` under `master`; kept below 2^63 so it fits a TOML integer.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    chain_rng(master ^ SWEEP_SALT, index).next_u64() >> 1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub seed: u64,
    /// `ok` or the failure message.
    pub status: String,
    pub error_metric: Option<f64>,
    pub bound: Option<BoundDecomposition>,
    /// `(K τ)²`, the squared worst-case score mismatch over the probes.
    pub mismatch_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutput {
    pub axis: String,
    pub rows: Vec<SweepRow>,
    /// Log-log slope of the error metric against the axis value.
    pub slope: Option<f64>,
    /// Log-log slope of the mismatch column against the axis value.
    pub mismatch_slope: Option<f64>,
}

/// Config for run `index` of the sweep.
pub fn variant(base: &ExperimentConfig, axis: SweepAxis, value: f64, index: usize) -> Result<ExperimentConfig, CliError> {
    let mut cfg = base.clone();
    cfg.diagnostics.sweep = None;
    cfg.manifest = None;
    cfg.sampler.seed = derive_seed(base.sampler.seed, index as u64);
    let count = |what: &str| {
        if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
            Ok(value as usize)
        } else {
            Err(CliError::Config {
                path: "diagnostics.sweep.values".into(),
                message: format!("{what} must be a positive integer, got {value}"),
            })
        }
    };
    match axis {
        SweepAxis::Gamma => cfg.sampler.schedule = StepSchedule::Constant { gamma: value },
        SweepAxis::Tau => {
            cfg.sampler.tau = value;
            if let Some(a) = cfg.sampler.annealing.as_mut() {
                a.tau_end = value;
            }
        }
        SweepAxis::Epsilon => {
            if value == 0.0 {
                cfg.score.kind = ScoreKindName::Exact;
                cfg.score.epsilon = None;
                cfg.score.omega = None;
            } else {
                cfg.score.kind = ScoreKindName::Perturbed;
                cfg.score.epsilon = Some(value);
            }
        }
        SweepAxis::Dim => cfg.prior.dim = count("D")?,
        SweepAxis::Iterations => cfg.sampler.n_iters = count("N")?,
    }
    Ok(cfg)
}

/// Error metric of a run: the time-averaged ensemble Fisher information when
/// an ensemble of prior draws is compared with a Gaussian oracle, otherwise
/// the Fisher information of a Gaussian fit, or grid-KL for 2D targets.
fn run_one(cfg: &ExperimentConfig) -> Result<(DiagnosticsReport, Option<f64>, f64), CliError> {
    let out = execute(cfg)?;
    if let Some(d) = out.divergence {
        return Err(CliError::Output(format!(
            "chain {} diverged at iteration {}",
            d.chain, d.iteration
        )));
    }
    let exp = cfg.build()?;
    let truth = exp.truth();
    let metric = match &truth {
        Some(Truth::Gaussian(post)) if cfg.sampler.init == InitKind::PriorDraw && cfg.sampler.chains >= 2 => {
            Some(ensemble_error(&exp, post)?)
        }
        Some(Truth::Gaussian(_)) => out.report.fisher_gaussian_fit,
        Some(Truth::Grid(_)) => out.report.grid_kl.as_ref().map(|k| k.value),
        None => None,
    };
    Ok((out.report, metric, final_tau(&exp)))
}

fn slope(points: impl Iterator<Item = (f64, Option<f64>)>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .filter_map(|(x, y)| y.map(|y| (x, y)))
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .collect();
    rate_fit(&pts).ok().map(|f| f.slope)
}

fn sweep_section(cfg: &ExperimentConfig) -> Result<&SweepSection, CliError> {
    let sw = cfg.diagnostics.sweep.as_ref().ok_or_else(|| CliError::Config {
        path: "diagnostics.sweep".into(),
        message: "a sweep needs axis and values".into(),
    })?;
    if sw.values.is_empty() {
        return Err(CliError::Config {
            path: "diagnostics.sweep.values".into(),
            message: "must not be empty".into(),
        });
    }
    Ok(sw)
}

/// Runs the sweep concurrently and writes one subdirectory per value plus
/// the combined CSV.
pub fn sweep(cfg: &ExperimentConfig, env: &Environment) -> Result<(PathBuf, SweepOutput), CliError> {
    let sw = sweep_section(cfg)?;
    cfg.build()?;
    let dir = env.resolve_dir(cfg);
    let variants: Vec<Result<ExperimentConfig, CliError>> = sw
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| variant(cfg, sw.axis, v, i))
        .collect();
    let results: Vec<_> = env.install(|| {
        variants
            .par_iter()
            .map(|v| match v {
                Ok(c) => run_one(c),
                Err(e) => Err(CliError::Output(e.to_string())),
            })
            .collect()
    })?;

    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut rows = Vec::with_capacity(results.len());
    for (i, (res, &value)) in results.into_iter().zip(&sw.values).enumerate() {
        let seed = derive_seed(cfg.sampler.seed, i as u64);
        let row = match res {
            Ok((report, metric, tau)) => {
                let run_dir = dir.join(format!("run_{i:03}"));
                fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
                let text = serde_json::to_string_pretty(&report)
                    .map_err(|e| CliError::Output(format!("cannot serialize summary: {e}")))?;
                fs::write(run_dir.join(SUMMARY_FILE), text).map_err(io_err(&run_dir))?;
                if let Ok(v) = &variants[i] {
                    let m = manifest(v, env, &run_dir, &[]);
                    fs::write(run_dir.join(MANIFEST_FILE), m.to_toml()?).map_err(io_err(&run_dir))?;
                }
                SweepRow {
                    axis_value: value,
                    seed,
                    status: "ok".into(),
                    error_metric: metric,
                    bound: report.bound,
                    mismatch_sq: report.mismatch_constant.map(|m| (m.k * tau).powi(2)),
                }
            }
            Err(e) => {
                log::warn!("sweep run {i} ({} = {value}) failed: {e}", sw.axis.name());
                SweepRow {
                    axis_value: value,
                    seed,
                    status: e.to_string(),
                    error_metric: None,
                    bound: None,
                    mismatch_sq: None,
                }
            }
        };
        rows.push(row);
    }
    let out = SweepOutput {
        axis: sw.axis.name().into(),
        slope: slope(rows.iter().map(|r| (r.axis_value, r.error_metric))),
        mismatch_slope: slope(rows.iter().map(|r| (r.axis_value, r.mismatch_sq))),
        rows,
    };
    write_sweep_csv(&dir.join(SWEEP_FILE), &out)?;
    Ok((dir, out))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn write_sweep_csv(path: &Path, out: &SweepOutput) -> Result<(), CliError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    let header = format!(
        "# funclangevin sweep over {}\n\
         # axis_value: value of the swept parameter\n\
         # seed: master seed of the run\n\
         # status: ok, or the failure message\n\
         # error_metric: ensemble Fisher, Gaussian-fit Fisher or grid-KL, whichever applies\n\
         # bound_initial, bound_discretization, bound_mismatch, bound_score_error, bound_total: bound terms\n\
         # mismatch_sq: squared worst-case score mismatch over the probes\n\
         # slope, mismatch_slope: log-log fits over all successful runs, repeated on every row\n",
        out.axis
    );
    file.write_all(header.as_bytes()).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let wrap = |e: csv::Error| CliError::Output(format!("{}: {e}", path.display()));
    w.write_record([
        "axis_value",
        "seed",
        "status",
        "error_metric",
        "bound_initial",
        "bound_discretization",
        "bound_mismatch",
        "bound_score_error",
        "bound_total",
        "mismatch_sq",
        "slope",
        "mismatch_slope",
    ])
    .map_err(wrap)?;
    for r in &out.rows {
        let b = r.bound;
        w.write_record([
            r.axis_value.to_string(),
            r.seed.to_string(),
            r.status.clone(),
            opt(r.error_metric),
            opt(b.map(|b| b.initial)),
            opt(b.map(|b| b.discretization)),
            opt(b.map(|b| b.mismatch)),
            opt(b.map(|b| b.score_error)),
            opt(b.map(|b| b.total)),
            opt(r.mismatch_sq),
            opt(out.slope),
            opt(out.mismatch_slope),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}
