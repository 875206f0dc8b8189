//! Experiment configuration files.
//!
//! A config is a TOML document with the sections `[problem]`, `[prior]`,
//! `[score]`, `[sampler]`, `[diagnostics]` and `[output]`. Every error names
//! the offending field as a dotted path, e.g. `prior.law`.

use std::path::Path;

use funclangevin::forward::{
    ForwardProblem, Likelihood, NoiseModel, Operator, PosteriorSpec, RosenbrockTarget,
};
use funclangevin::oracle::{linear_gaussian_posterior, rosenbrock_grid, DiagGaussian, GridDensity2D};
use funclangevin::sampler::{chain_rng, Annealing, ChainConfig, StepSchedule, DEFAULT_DIVERGENCE_CEILING};
use funclangevin::score::{Perturbation, ScoreModel};
use funclangevin::spectral::{sample_gaussian, CoeffVec, EigenLaw, GaussianMeasure, SpectralOperator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Rosenbrock,
    ModeObservation,
    QuadraticMap,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synthesis {
    pub seed: u64,
    /// Ground truth; drawn from the prior when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_true: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_obs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesize: Option<Synthesis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawName {
    /// `λ_j = scale · j^{−exponent}`.
    Power,
    /// `λ_j = value`.
    Constant,
    /// Listed eigenvalues.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub dim: usize,
    pub law: LawName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKindName {
    #[default]
    Exact,
    Perturbed,
}

/// The diffusion operator `C` defaults to the prior covariance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    #[serde(default)]
    pub kind: ScoreKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<LawName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    /// Declared error bound `ε_τ` of a perturbed score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    PriorMean,
    Zero,
    /// Independent prior draw per chain.
    PriorDraw,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_ceiling() -> f64 {
    DEFAULT_DIVERGENCE_CEILING
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "one")]
    pub alpha: f64,
    pub tau: f64,
    pub n_iters: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one_usize")]
    pub lag: usize,
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub chains: usize,
    #[serde(default)]
    pub init: InitKind,
    pub schedule: StepSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annealing: Option<Annealing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic_batch: Option<usize>,
    #[serde(default = "default_ceiling")]
    pub divergence_ceiling: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "gamma")]
    Gamma,
    #[serde(rename = "tau")]
    Tau,
    #[serde(rename = "epsilon")]
    Epsilon,
    #[serde(rename = "D")]
    Dim,
    #[serde(rename = "N")]
    Iterations,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Gamma => "gamma",
            SweepAxis::Tau => "tau",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Dim => "D",
            SweepAxis::Iterations => "N",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

fn yes() -> bool {
    true
}

fn default_probes() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Compare against a closed-form or quadrature oracle when one exists.
    #[serde(default = "yes")]
    pub oracle: bool,
    /// Histogram bins per axis for grid-KL on two-dimensional targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_kl_bins: Option<usize>,
    #[serde(default = "yes")]
    pub bound: bool,
    /// `KL(ν0 ‖ μ^y)` for the bound; computed in closed form when possible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl0: Option<f64>,
    /// Prior draws used as probes for the mismatch constant.
    #[serde(default = "default_probes")]
    pub mismatch_probes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            oracle: true,
            grid_kl_bins: None,
            bound: true,
            kl0: None,
            mismatch_probes: default_probes(),
            sweep: None,
        }
    }
}

fn default_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "yes")]
    pub samples: bool,
    /// Write an end-of-run checkpoint per chain.
    #[serde(default)]
    pub checkpoints: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            samples: true,
            checkpoints: false,
        }
    }
}

/// Provenance written into emitted manifests; ignored on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSection {
    pub tool_version: String,
    pub master_seed: u64,
    /// RNG stream of each chain under the master seed.
    pub chain_streams: Vec<u64>,
    pub output_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads_env: Option<usize>,
    /// Observation actually used, after synthesis.
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub prior: PriorSection,
    #[serde(default)]
    pub score: ScoreSection,
    pub sampler: SamplerSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestSection>,
}

fn field(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| {
            let at = e.span().map(|s| format!(" (line {})", line_of(text, s.start))).unwrap_or_default();
            field("<document>", format!("{}{at}", e.message()))
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let at = inner.span().map(|s| format!(" (line {})", line_of(text, s.start))).unwrap_or_default();
            field(&path, format!("{}{at}", inner.message()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Output(format!("cannot serialize config: {e}")))
    }

    pub fn chain_config(&self) -> ChainConfig {
        let s = &self.sampler;
        ChainConfig {
            alpha: s.alpha,
            schedule: s.schedule,
            annealing: s.annealing,
            tau: s.tau,
            n_iters: s.n_iters,
            burn_in: s.burn_in,
            lag: s.lag,
            seed: s.seed,
            stochastic_batch: s.stochastic_batch,
            divergence_ceiling: s.divergence_ceiling,
        }
    }

    /// Validates every section and assembles the runnable pieces.
    pub fn build(&self) -> Result<Experiment, CliError> {
        let dim = self.prior.dim;
        if dim == 0 {
            return Err(field("prior.dim", "must be at least 1"));
        }
        let prior_op = build_operator(
            "prior",
            self.prior.law,
            self.prior.exponent,
            self.prior.scale,
            self.prior.value,
            self.prior.eigenvalues.as_deref(),
            dim,
        )?;
        let mean = match &self.prior.mean {
            None => CoeffVec::zeros(dim),
            Some(m) if m.len() != dim => {
                return Err(field("prior.mean", format!("has {} entries, prior.dim is {dim}", m.len())))
            }
            Some(m) => CoeffVec::new(m.clone()).map_err(|e| field("prior.mean", e.to_string()))?,
        };
        let prior = GaussianMeasure::new(prior_op.clone(), mean).map_err(|e| field("prior", e.to_string()))?;

        let c = match self.score.law {
            None => {
                for (name, set) in [
                    ("exponent", self.score.exponent.is_some()),
                    ("scale", self.score.scale.is_some()),
                    ("value", self.score.value.is_some()),
                    ("eigenvalues", self.score.eigenvalues.is_some()),
                ] {
                    if set {
                        return Err(field(&format!("score.{name}"), "needs score.law"));
                    }
                }
                prior_op.clone()
            }
            Some(law) => build_operator(
                "score",
                law,
                self.score.exponent,
                self.score.scale,
                self.score.value,
                self.score.eigenvalues.as_deref(),
                dim,
            )?,
        };
        let score = match self.score.kind {
            ScoreKindName::Exact => {
                if self.score.epsilon.is_some() {
                    return Err(field("score.epsilon", "only valid for kind = \"perturbed\""));
                }
                ScoreModel::exact(c, prior_op.clone())
            }
            ScoreKindName::Perturbed => {
                let eps = self
                    .score
                    .epsilon
                    .ok_or_else(|| field("score.epsilon", "required for a perturbed score"))?;
                ScoreModel::perturbed(c, prior_op.clone(), Perturbation::new(eps, self.score.omega.unwrap_or(1.0)))
            }
        }
        .map_err(|e| field("score", e.to_string()))?;

        let likelihood = self.build_likelihood(&prior)?;
        let spec = PosteriorSpec::new(prior, likelihood).map_err(|e| field("problem.d0", e.to_string()))?;

        let chain = self.chain_config();
        chain.validate().map_err(|e| field(&sampler_path(&e), e.to_string()))?;
        if self.sampler.chains == 0 {
            return Err(field("sampler.chains", "must be at least 1"));
        }
        if let Some(b) = chain.stochastic_batch {
            let n = spec.likelihood.n_components();
            if b > n {
                return Err(field("sampler.stochastic_batch", format!("{b} exceeds the {n} observations")));
            }
        }
        if let Some(bins) = self.diagnostics.grid_kl_bins {
            if bins == 0 {
                return Err(field("diagnostics.grid_kl_bins", "must be positive"));
            }
        }
        if let Some(sw) = &self.diagnostics.sweep {
            if sw.values.is_empty() {
                return Err(field("diagnostics.sweep.values", "must not be empty"));
            }
        }

        let inits = self.initial_states(&spec);
        Ok(Experiment {
            spec,
            score,
            chain,
            inits,
        })
    }

    fn build_likelihood(&self, prior: &GaussianMeasure) -> Result<Likelihood, CliError> {
        let p = &self.problem;
        if p.kind == ProblemKind::Rosenbrock {
            for (name, set) in [
                ("d0", p.d0.is_some()),
                ("n_obs", p.n_obs.is_some()),
                ("noise_variance", p.noise_variance.is_some()),
                ("y", p.y.is_some()),
                ("synthesize", p.synthesize.is_some()),
            ] {
                if set {
                    return Err(field(&format!("problem.{name}"), "not used by the rosenbrock problem"));
                }
            }
            if prior.dim() < 2 {
                return Err(field("prior.dim", "rosenbrock needs two modes"));
            }
            return Ok(Likelihood::Rosenbrock(RosenbrockTarget));
        }
        let d0 = p.d0.ok_or_else(|| field("problem.d0", "required"))?;
        if d0 == 0 {
            return Err(field("problem.d0", "must be at least 1"));
        }
        if d0 > prior.dim() {
            return Err(field("problem.d0", format!("{d0} exceeds prior.dim = {}", prior.dim())));
        }
        let operator = match p.kind {
            ProblemKind::ModeObservation => Operator::ModeObservation { d0 },
            ProblemKind::QuadraticMap => Operator::QuadraticMap { d0 },
            ProblemKind::Zero => Operator::Zero {
                d0,
                n_obs: p.n_obs.ok_or_else(|| field("problem.n_obs", "required for the zero operator"))?,
            },
            ProblemKind::Rosenbrock => unreachable!(),
        };
        if p.n_obs.is_some() && p.kind != ProblemKind::Zero {
            return Err(field("problem.n_obs", "only used by the zero operator"));
        }
        let s2 = p
            .noise_variance
            .ok_or_else(|| field("problem.noise_variance", "required"))?;
        let noise = NoiseModel::gaussian(s2).map_err(|e| field("problem.noise_variance", e.to_string()))?;
        let problem = match (&p.y, &p.synthesize) {
            (Some(_), Some(_)) => return Err(field("problem.synthesize", "give either y or synthesize, not both")),
            (None, None) => return Err(field("problem.y", "required unless problem.synthesize is given")),
            (Some(y), None) => ForwardProblem::new(operator, noise, y.clone())
                .map_err(|e| field("problem.y", e.to_string()))?,
            (None, Some(syn)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(syn.seed);
                let x_true = match &syn.x_true {
                    Some(x) => {
                        if x.len() != prior.dim() {
                            return Err(field(
                                "problem.synthesize.x_true",
                                format!("has {} entries, prior.dim is {}", x.len(), prior.dim()),
                            ));
                        }
                        CoeffVec::new(x.clone()).map_err(|e| field("problem.synthesize.x_true", e.to_string()))?
                    }
                    None => sample_gaussian(prior, &mut rng),
                };
                ForwardProblem::synthesize(operator, noise, &x_true, &mut rng)
                    .map_err(|e| field("problem.synthesize", e.to_string()))?
            }
        };
        Ok(Likelihood::Forward(problem))
    }

    fn initial_states(&self, spec: &PosteriorSpec) -> Vec<CoeffVec> {
        (0..self.sampler.chains as u64)
            .map(|i| match self.sampler.init {
                InitKind::PriorMean => spec.prior.mean.clone(),
                InitKind::Zero => CoeffVec::zeros(spec.dim()),
                InitKind::PriorDraw => {
                    let mut rng = chain_rng(self.sampler.seed ^ INIT_SALT, i);
                    sample_gaussian(&spec.prior, &mut rng)
                }
            })
            .collect()
    }
}

/// Separates the initial-draw streams from the chain noise streams.
const INIT_SALT: u64 = 0x696e_6974;

fn sampler_path(e: &funclangevin::Error) -> String {
    match e {
        funclangevin::Error::InvalidParameter { name, .. } => match *name {
            "gamma" | "exponent" => "sampler.schedule".into(),
            "tau_start" | "eta_start" => format!("sampler.annealing.{name}"),
            other => format!("sampler.{other}"),
        },
        funclangevin::Error::Instability { .. } => "sampler.tau".into(),
        _ => "sampler".into(),
    }
}

fn build_operator(
    section: &str,
    law: LawName,
    exponent: Option<f64>,
    scale: Option<f64>,
    value: Option<f64>,
    eigenvalues: Option<&[f64]>,
    dim: usize,
) -> Result<SpectralOperator, CliError> {
    let unused = |name: &str, set: bool| {
        if set {
            Err(field(&format!("{section}.{name}"), format!("not used by law = \"{law:?}\"").to_lowercase()))
        } else {
            Ok(())
        }
    };
    let op = match law {
        LawName::Power => {
            unused("value", value.is_some())?;
            unused("eigenvalues", eigenvalues.is_some())?;
            let exponent = exponent.ok_or_else(|| field(&format!("{section}.exponent"), "required for law = \"power\""))?;
            SpectralOperator::from_law(
                EigenLaw::Power {
                    exponent,
                    scale: scale.unwrap_or(1.0),
                },
                dim,
            )
            .map_err(|e| field(&format!("{section}.exponent"), e.to_string()))?
        }
        LawName::Constant => {
            unused("exponent", exponent.is_some())?;
            unused("scale", scale.is_some())?;
            unused("eigenvalues", eigenvalues.is_some())?;
            let value = value.ok_or_else(|| field(&format!("{section}.value"), "required for law = \"constant\""))?;
            SpectralOperator::from_law(EigenLaw::Constant { value }, dim)
                .map_err(|e| field(&format!("{section}.value"), e.to_string()))?
        }
        LawName::Explicit => {
            unused("exponent", exponent.is_some())?;
            unused("scale", scale.is_some())?;
            unused("value", value.is_some())?;
            let ev = eigenvalues
                .ok_or_else(|| field(&format!("{section}.eigenvalues"), "required for law = \"explicit\""))?;
            if ev.len() != dim {
                return Err(field(
                    &format!("{section}.eigenvalues"),
                    format!("has {} entries, prior.dim is {dim}", ev.len()),
                ));
            }
            SpectralOperator::new(ev.to_vec()).map_err(|e| field(&format!("{section}.eigenvalues"), e.to_string()))?
        }
    };
    Ok(op)
}

/// A validated, runnable experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: PosteriorSpec,
    pub score: ScoreModel,
    pub chain: ChainConfig,
    pub inits: Vec<CoeffVec>,
}

/// Ground truth available for an experiment.
#[derive(Debug, Clone)]
pub enum Truth {
    Gaussian(DiagGaussian),
    Grid(Box<GridDensity2D>),
}

/// Quadrature resolution for the Rosenbrock truth.
pub const ROSENBROCK_GRID_RESOLUTION: usize = 512;

impl Experiment {
    pub fn truth(&self) -> Option<Truth> {
        match &self.spec.likelihood {
            Likelihood::Rosenbrock(_) => {
                let ev = self.spec.prior.covariance.eigenvalues();
                let standard = ev[..2].iter().all(|&v| v == 1.0)
                    && self.spec.prior.mean.as_slice()[..2].iter().all(|&m| m == 0.0);
                if standard {
                    rosenbrock_grid(ROSENBROCK_GRID_RESOLUTION).ok().map(|g| Truth::Grid(Box::new(g)))
                } else {
                    None
                }
            }
            Likelihood::Forward(_) => linear_gaussian_posterior(&self.spec).ok().map(Truth::Gaussian),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[problem]
kind = "mode_observation"
d0 = 2
noise_variance = 0.5
y = [1.0, -1.0]

[prior]
dim = 4
law = "power"
exponent = 2.0

[sampler]
tau = 0.01
n_iters = 100
seed = 1
schedule = { kind = "constant", gamma = 0.01 }
"#;

    fn err_path(text: &str) -> String {
        match ExperimentConfig::parse(text).and_then(|c| c.build().map(|_| c)) {
            Err(CliError::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn base_config_builds() {
        let cfg = ExperimentConfig::parse(BASE).unwrap();
        let exp = cfg.build().unwrap();
        assert_eq!(exp.spec.dim(), 4);
        assert_eq!(exp.inits.len(), 1);
        assert!(matches!(exp.truth(), Some(Truth::Gaussian(_))));
        let round = ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(err_path(&BASE.replace("\"power\"", "\"powr\"")), "prior.law");
        assert_eq!(err_path(&BASE.replace("d0 = 2", "d0 = 9")), "problem.d0");
        assert_eq!(err_path(&BASE.replace("seed = 1", "seed = 1\nburn_in = 100")), "sampler.burn_in");
        assert_eq!(err_path(&BASE.replace("tau = 0.01", "tau = 0.0")), "sampler.tau");
        assert_eq!(err_path(&BASE.replace("exponent = 2.0", "exponent = 2.0\nvalue = 1.0")), "prior.value");
        assert_eq!(err_path(&BASE.replace("y = [1.0, -1.0]", "y = [1.0]")), "problem.y");
        assert_eq!(err_path(&BASE.replace("kind = \"constant\"", "kind = \"cubic\"")), "sampler.schedule.kind");
        assert_eq!(err_path(&format!("{BASE}\n[score]\nkind = \"perturbed\"\n")), "score.epsilon");
        assert_eq!(err_path(&format!("{BASE}\n[output]\ndirr = \"x\"\n")), "output.dirr");
        let unknown = err_path(&BASE.replace("[prior]", "[prior]\ncolour = 1"));
        assert!(unknown.starts_with("prior"), "{unknown}");
    }

    #[test]
    fn synthesized_observations_are_deterministic() {
        let text = BASE.replace("y = [1.0, -1.0]", "synthesize = { seed = 4 }");
        let a = ExperimentConfig::parse(&text).unwrap().build().unwrap();
        let b = ExperimentConfig::parse(&text).unwrap().build().unwrap();
        assert_eq!(a.spec, b.spec);
    }

    #[test]
    fn prior_draw_inits_differ_per_chain() {
        let text = BASE.replace("seed = 1", "seed = 1\nchains = 3\ninit = \"prior_draw\"");
        let exp = ExperimentConfig::parse(&text).unwrap().build().unwrap();
        assert_eq!(exp.inits.len(), 3);
        assert_ne!(exp.inits[0], exp.inits[1]);
    }
}
