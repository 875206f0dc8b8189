//! Diffusion-prior scores for Gaussian priors.
//!
//! The forward diffusion `dX = -X/2 dτ + √C dW` started from
//! `μ0 = N(0, C_{μ0})` stays Gaussian and diagonal in the shared eigenbasis,
//! so the score, the denoiser `E[X0 | Xτ = x]` and the mismatch against the
//! prior drift `-C C_{μ0}^{-1} x` all act mode by mode through
//! `p0^(j) = λ_j / μ_{0j}`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::{check_dim, validate_ratio, CoeffVec, SpectralOperator};

/// Below this diffusion time `e^τ − 1` is replaced by its first-order Taylor term.
pub const MIN_TAU: f64 = 1e-8;

/// A strictly positive diffusion time.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DiffusionTime(f64);

impl DiffusionTime {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid("tau", format!("diffusion time must be positive, got {tau}")));
        }
        Ok(Self(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

fn expm1_guarded(tau: f64) -> f64 {
    if tau < MIN_TAU {
        tau
    } else {
        tau.exp_m1()
    }
}

/// Per-mode factor `e^τ p0 / (1 + (e^τ − 1) p0)`; the score is `-factor · x`.
fn score_factor(em1: f64, p0: f64) -> f64 {
    (1.0 + em1) * p0 / (1.0 + em1 * p0)
}

/// Anything that can stand in for the prior score inside the sampler.
pub trait Score: Sync {
    /// The operator `C` driving the diffusion; also the sampler preconditioner.
    fn operator(&self) -> &SpectralOperator;

    /// Writes `S_θ(τ, x)` into `out`.
    fn eval_into(&self, tau: f64, x: &[f64], out: &mut [f64]);

    /// Declared Lipschitz constant `L_τ` in `x`.
    fn lipschitz(&self, tau: f64) -> f64;

    /// Declared sup-norm error bound `ε_τ` against the exact score.
    fn error_bound(&self, _tau: f64) -> f64 {
        0.0
    }

    fn dim(&self) -> usize {
        self.operator().dim()
    }

    fn eval(&self, tau: f64, x: &CoeffVec) -> CoeffVec {
        let mut out = vec![0.0; x.dim()];
        self.eval_into(tau, x.as_slice(), &mut out);
        CoeffVec::from_vec_unchecked(out)
    }
}

/// Time dependence of a perturbation amplitude or error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ErrorBound {
    Constant { value: f64 },
    /// `scale · τ^exponent`
    Power { scale: f64, exponent: f64 },
}

impl ErrorBound {
    pub fn constant(value: f64) -> Self {
        ErrorBound::Constant { value }
    }

    pub fn at(&self, tau: f64) -> f64 {
        match *self {
            ErrorBound::Constant { value } => value,
            ErrorBound::Power { scale, exponent } => scale * tau.powf(exponent),
        }
    }

    fn validate(&self, name: &'static str) -> Result<()> {
        let ok = match *self {
            ErrorBound::Constant { value } => value >= 0.0 && value.is_finite(),
            ErrorBound::Power { scale, exponent } => {
                scale >= 0.0 && scale.is_finite() && exponent.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(name, format!("{self:?} is not a valid nonnegative bound")))
        }
    }
}

/// Deterministic bounded perturbation `amplitude(τ) · sin(ω x^(1)) e_1`.
///
/// Its sup norm is `amplitude(τ)` and its Lipschitz constant is
/// `amplitude(τ) · ω`, both known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Declared `ε_τ`.
    pub bound: ErrorBound,
    /// Actual amplitude; defaults to the declared bound.
    pub amplitude: Option<ErrorBound>,
    pub omega: f64,
}

impl Perturbation {
    pub fn new(epsilon: f64, omega: f64) -> Self {
        Self {
            bound: ErrorBound::constant(epsilon),
            amplitude: None,
            omega,
        }
    }

    fn amplitude_at(&self, tau: f64) -> f64 {
        self.amplitude.unwrap_or(self.bound).at(tau)
    }

    fn value(&self, tau: f64, x1: f64) -> f64 {
        self.amplitude_at(tau) * (self.omega * x1).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreKind {
    Exact,
    Perturbed(Perturbation),
}

/// Exact Gaussian score for the pair `(C, C_{μ0})`, optionally perturbed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    c: SpectralOperator,
    c_mu0: SpectralOperator,
    ratios: Vec<f64>,
    kind: ScoreKind,
}

/// Diffusion times at which a perturbation is checked against its declared bound.
const PROBE_TAUS: [f64; 6] = [1e-6, 1e-4, 1e-2, 0.1, 1.0, 10.0];
const PROBE_POINTS: usize = 100;

impl ScoreModel {
    pub fn exact(c: SpectralOperator, c_mu0: SpectralOperator) -> Result<Self> {
        let report = validate_ratio(&c, &c_mu0)?;
        Ok(Self {
            c,
            c_mu0,
            ratios: report.ratios,
            kind: ScoreKind::Exact,
        })
    }

    pub fn perturbed(
        c: SpectralOperator,
        c_mu0: SpectralOperator,
        perturbation: Perturbation,
    ) -> Result<Self> {
        perturbation.bound.validate("epsilon")?;
        if let Some(a) = perturbation.amplitude {
            a.validate("amplitude")?;
        }
        if !(perturbation.omega > 0.0 && perturbation.omega.is_finite()) {
            return Err(invalid("omega", "must be positive"));
        }
        let mut model = Self::exact(c, c_mu0)?;
        model.kind = ScoreKind::Perturbed(perturbation);
        for tau in PROBE_TAUS {
            model.check_perturbation(tau)?;
        }
        Ok(model)
    }

    pub fn kind(&self) -> &ScoreKind {
        &self.kind
    }

    pub fn c(&self) -> &SpectralOperator {
        &self.c
    }

    pub fn c_mu0(&self) -> &SpectralOperator {
        &self.c_mu0
    }

    /// `p0^(j) = λ_j / μ_{0j}`.
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// Lipschitz constant of the exact score, `max_j e^τ p0 / (1 + (e^τ − 1) p0)`.
    pub fn exact_lipschitz(&self, tau: f64) -> f64 {
        let em1 = expm1_guarded(tau);
        self.ratios
            .iter()
            .map(|&p| score_factor(em1, p).abs())
            .fold(0.0, f64::max)
    }

    /// Sup of the perturbation over a grid covering one period of the
    /// first coefficient, compared against the declared `ε_τ`.
    pub fn check_perturbation(&self, tau: f64) -> Result<f64> {
        let ScoreKind::Perturbed(p) = &self.kind else {
            return Ok(0.0);
        };
        let period = std::f64::consts::TAU / p.omega;
        let sup = (0..PROBE_POINTS)
            .map(|i| p.value(tau, period * i as f64 / (PROBE_POINTS - 1) as f64).abs())
            .fold(0.0, f64::max);
        let eps = p.bound.at(tau);
        if sup > eps * (1.0 + 1e-12) {
            return Err(Error::Configuration(format!(
                "perturbation sup {sup} exceeds declared error bound {eps} at tau = {tau}"
            )));
        }
        Ok(sup)
    }

    /// `S(τ, x)` without the perturbation.
    pub fn exact_score(&self, tau: DiffusionTime, x: &CoeffVec) -> Result<CoeffVec> {
        check_dim(self.c.dim(), x.dim())?;
        let mut out = vec![0.0; x.dim()];
        self.exact_into(tau.get(), x.as_slice(), &mut out);
        Ok(CoeffVec::from_vec_unchecked(out))
    }

    /// `S_θ(τ, x)` for a perturbed model.
    pub fn perturbed_score(&self, tau: DiffusionTime, x: &CoeffVec) -> Result<CoeffVec> {
        if !matches!(self.kind, ScoreKind::Perturbed(_)) {
            return Err(Error::Configuration(
                "perturbed_score called on an exact score model".into(),
            ));
        }
        check_dim(self.c.dim(), x.dim())?;
        Ok(Score::eval(self, tau.get(), x))
    }

    fn exact_into(&self, tau: f64, x: &[f64], out: &mut [f64]) {
        let em1 = expm1_guarded(tau);
        for ((o, &xi), &p) in out.iter_mut().zip(x).zip(&self.ratios) {
            *o = -score_factor(em1, p) * xi;
        }
    }
}

impl Score for ScoreModel {
    fn operator(&self) -> &SpectralOperator {
        &self.c
    }

    fn eval_into(&self, tau: f64, x: &[f64], out: &mut [f64]) {
        self.exact_into(tau, x, out);
        if let ScoreKind::Perturbed(p) = &self.kind {
            out[0] += p.value(tau, x[0]);
        }
    }

    fn lipschitz(&self, tau: f64) -> f64 {
        let exact = self.exact_lipschitz(tau);
        match &self.kind {
            ScoreKind::Exact => exact,
            ScoreKind::Perturbed(p) => exact + p.amplitude_at(tau) * p.omega,
        }
    }

    fn error_bound(&self, tau: f64) -> f64 {
        match &self.kind {
            ScoreKind::Exact => 0.0,
            ScoreKind::Perturbed(p) => p.bound.at(tau),
        }
    }
}

/// `S(τ, x; μ0) = -C C_τ^{-1} x` with `C_τ = e^{-τ} C_{μ0} + (1 − e^{-τ}) C`.
pub fn exact_score(
    tau: DiffusionTime,
    x: &CoeffVec,
    c: &SpectralOperator,
    c_mu0: &SpectralOperator,
) -> Result<CoeffVec> {
    check_dim(c.dim(), x.dim())?;
    let ratios = validate_ratio(c, c_mu0)?.ratios;
    let em1 = expm1_guarded(tau.get());
    Ok(CoeffVec::from_vec_unchecked(
        x.iter()
            .zip(&ratios)
            .map(|(&xi, &p)| -score_factor(em1, p) * xi)
            .collect(),
    ))
}

/// Posterior mean `E[X0 | Xτ = x]`, coefficientwise `a_j x^(j)` with
/// `a_j = e^{τ/2} / (1 + (e^τ − 1) p0^(j))`. Defined for `τ ≥ 0`.
pub fn denoiser(
    tau: f64,
    x: &CoeffVec,
    c: &SpectralOperator,
    c_mu0: &SpectralOperator,
) -> Result<CoeffVec> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(invalid("tau", format!("must be nonnegative, got {tau}")));
    }
    check_dim(c.dim(), x.dim())?;
    let ratios = validate_ratio(c, c_mu0)?.ratios;
    let em1 = tau.exp_m1();
    let half = (tau / 2.0).exp();
    Ok(CoeffVec::from_vec_unchecked(
        x.iter()
            .zip(&ratios)
            .map(|(&xi, &p)| half / (1.0 + em1 * p) * xi)
            .collect(),
    ))
}

/// One draw of `Xτ | X0 = x0`: coefficients `N(e^{-τ/2} x0^(j), (1 − e^{-τ}) λ_j)`.
pub fn diffuse<R: Rng + ?Sized>(
    x0: &CoeffVec,
    tau: DiffusionTime,
    c: &SpectralOperator,
    rng: &mut R,
) -> Result<CoeffVec> {
    check_dim(c.dim(), x0.dim())?;
    let tau = tau.get();
    let decay = (-tau / 2.0).exp();
    let spread = -(-tau).exp_m1();
    Ok(CoeffVec::from_vec_unchecked(
        x0.iter()
            .zip(c.eigenvalues())
            .map(|(&x, &l)| {
                let z: f64 = rng.sample(StandardNormal);
                decay * x + (spread * l).sqrt() * z
            })
            .collect(),
    ))
}

/// Denoising score-matching regression target
/// `(1 − e^{-τ})^{-1} (xτ − e^{-τ/2} x0)`.
///
/// Its conditional expectation given `Xτ = x` is `-S(τ, x)`.
pub fn dsm_target(tau: f64, x0: &CoeffVec, x_tau: &CoeffVec) -> Result<CoeffVec> {
    if !(tau > 0.0) {
        return Err(Error::Instability { tau });
    }
    check_dim(x0.dim(), x_tau.dim())?;
    let denom = -(-tau).exp_m1();
    let decay = (-tau / 2.0).exp();
    Ok(CoeffVec::from_vec_unchecked(
        x_tau
            .iter()
            .zip(x0.iter())
            .map(|(&xt, &x)| (xt - decay * x) / denom)
            .collect(),
    ))
}

/// `C C_{μ0}^{-1} x + S(τ, x)`, coefficientwise
/// `(e^τ − 1) (p0 − 1) / (1 + (e^τ − 1) p0) · p0 · x^(j)`.
pub fn score_mismatch(
    tau: DiffusionTime,
    x: &CoeffVec,
    c: &SpectralOperator,
    c_mu0: &SpectralOperator,
) -> Result<CoeffVec> {
    check_dim(c.dim(), x.dim())?;
    let ratios = validate_ratio(c, c_mu0)?.ratios;
    let em1 = expm1_guarded(tau.get());
    Ok(CoeffVec::from_vec_unchecked(
        x.iter()
            .zip(&ratios)
            .map(|(&xi, &p)| em1 * (p - 1.0) / (1.0 + em1 * p) * p * xi)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cv(v: &[f64]) -> CoeffVec {
        CoeffVec::new(v.to_vec()).unwrap()
    }

    fn op(v: &[f64]) -> SpectralOperator {
        SpectralOperator::new(v.to_vec()).unwrap()
    }

    fn t(tau: f64) -> DiffusionTime {
        DiffusionTime::new(tau).unwrap()
    }

    /// `E[X0 | Xτ = x]` for scalar Gaussians by direct conditioning:
    /// `Cov(X0, Xτ) / Var(Xτ) · x`.
    fn scalar_conditional_mean(tau: f64, lambda: f64, mu0: f64, x: f64) -> f64 {
        let cov = (-tau / 2.0).exp() * mu0;
        let var = (-tau).exp() * mu0 + (1.0 - (-tau).exp()) * lambda;
        cov / var * x
    }

    #[test]
    fn exact_score_identical_operators_is_minus_identity() {
        let c = op(&[1.0, 0.25]);
        for tau in [1e-3, 0.5, 3.0] {
            let s = exact_score(t(tau), &cv(&[2.0, -1.0]), &c, &c).unwrap();
            assert!((s[0] + 2.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_score_scalar_conditioning() {
        let tau = 2f64.ln();
        let s = exact_score(t(tau), &cv(&[1.0]), &op(&[2.0]), &op(&[1.0])).unwrap();
        assert!((s[0] + 4.0 / 3.0).abs() < 1e-14);
        // Same value through the definition with the independently
        // conditioned posterior mean.
        let m = scalar_conditional_mean(tau, 2.0, 1.0, 1.0);
        let via_def = -(1.0 - m * (-tau / 2.0).exp()) / (1.0 - (-tau).exp());
        assert!((s[0] - via_def).abs() < 1e-14);
    }

    #[test]
    fn exact_score_large_tau_limit() {
        let s = exact_score(t(40.0), &cv(&[3.0, -2.0]), &op(&[5.0, 0.1]), &op(&[1.0, 1.0]))
            .unwrap();
        assert!((s[0] + 3.0).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_score_below_min_tau_is_finite_and_continuous() {
        let c = op(&[2.0]);
        let mu = op(&[1.0]);
        let below = exact_score(t(MIN_TAU / 2.0), &cv(&[1.0]), &c, &mu).unwrap();
        let above = exact_score(t(MIN_TAU * 2.0), &cv(&[1.0]), &c, &mu).unwrap();
        assert!((below[0] + 2.0).abs() < 1e-7);
        assert!((below[0] - above[0]).abs() < 1e-7);
    }

    #[test]
    fn denoiser_examples() {
        let c = op(&[2.0, 0.5]);
        let mu = op(&[1.0, 1.0]);
        let x = cv(&[1.5, -0.5]);
        assert_eq!(denoiser(0.0, &x, &c, &mu).unwrap(), x);

        for tau in [0.1, 1.0, 4.0] {
            let d = denoiser(tau, &cv(&[1.0]), &op(&[0.7]), &op(&[0.7])).unwrap();
            assert!((d[0] - (-tau / 2.0).exp()).abs() < 1e-14);
            let oracle = scalar_conditional_mean(tau, 0.7, 0.7, 1.0);
            assert!((d[0] - oracle).abs() < 1e-14);
        }

        let tau = 2f64.ln();
        let d = denoiser(tau, &cv(&[1.0]), &op(&[2.0]), &op(&[1.0])).unwrap();
        assert!((d[0] - 2f64.sqrt() / 3.0).abs() < 1e-14);
        assert!((d[0] - scalar_conditional_mean(tau, 2.0, 1.0, 1.0)).abs() < 1e-14);

        assert!(denoiser(-1.0, &x, &c, &mu).is_err());
    }

    #[test]
    fn diffuse_limits_and_variance() {
        let c = op(&[1.0, 3.0]);
        let x0 = cv(&[2.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let near = diffuse(&x0, t(1e-14), &c, &mut rng).unwrap();
        assert!((near[0] - 2.0).abs() < 1e-6 && (near[1] + 1.0).abs() < 1e-6);

        // Stationary limit: per-mode variance → λ_j, mean → 0.
        let n = 50_000;
        let mut s2 = [0.0; 2];
        for _ in 0..n {
            let x = diffuse(&x0, t(50.0), &c, &mut rng).unwrap();
            s2[0] += x[0] * x[0];
            s2[1] += x[1] * x[1];
        }
        assert!((s2[0] / n as f64 - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
        assert!((s2[1] / n as f64 - 3.0).abs() < 3.0 * 3.0 * (2.0 / n as f64).sqrt());

        let n = 100_000;
        let zero = cv(&[0.0]);
        let one = op(&[1.0]);
        let draws: Vec<f64> = (0..n)
            .map(|_| diffuse(&zero, t(2f64.ln()), &one, &mut rng).unwrap()[0])
            .collect();
        let var = draws.iter().map(|d| d * d).sum::<f64>() / n as f64;
        assert!((var - 0.5).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn dsm_target_examples() {
        let tau: f64 = 0.7;
        let x0 = cv(&[1.0, -2.0]);
        let xt = x0.scaled((-tau / 2.0).exp());
        let z = dsm_target(tau, &x0, &xt).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-15));

        let v = cv(&[0.3, -1.1]);
        let z = dsm_target(2f64.ln(), &cv(&[0.0, 0.0]), &v).unwrap();
        assert!((z[0] - 0.6).abs() < 1e-14 && (z[1] + 2.2).abs() < 1e-14);

        assert!(matches!(
            dsm_target(0.0, &x0, &x0),
            Err(Error::Instability { .. })
        ));
    }

    #[test]
    fn mismatch_examples() {
        let c = op(&[0.3, 0.1]);
        for tau in [1e-4, 0.3, 5.0] {
            let m = score_mismatch(t(tau), &cv(&[1.0, 2.0]), &c, &c).unwrap();
            assert!(m.iter().all(|v| *v == 0.0));
        }
        let m = score_mismatch(t(2f64.ln()), &cv(&[1.0]), &op(&[2.0]), &op(&[1.0])).unwrap();
        assert!((m[0] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn perturbed_examples() {
        let c = op(&[1.0, 0.5]);
        let mu = op(&[2.0, 1.0]);
        let exact = ScoreModel::exact(c.clone(), mu.clone()).unwrap();
        let zero = ScoreModel::perturbed(c.clone(), mu.clone(), Perturbation::new(0.0, 1.0)).unwrap();
        let x = cv(&[0.4, -1.0]);
        assert_eq!(
            zero.perturbed_score(t(0.1), &x).unwrap(),
            exact.exact_score(t(0.1), &x).unwrap()
        );

        let omega = 2.0;
        let p = ScoreModel::perturbed(c.clone(), mu.clone(), Perturbation::new(0.1, omega)).unwrap();
        let x = cv(&[std::f64::consts::PI / (2.0 * omega), 0.7]);
        let sp = p.perturbed_score(t(0.1), &x).unwrap();
        let se = exact.exact_score(t(0.1), &x).unwrap();
        assert!((sp[0] - se[0] - 0.1).abs() < 1e-15);
        assert_eq!(sp[1], se[1]);
        assert!(p.check_perturbation(0.1).unwrap() <= 0.1);

        assert!(exact.perturbed_score(t(0.1), &x).is_err());
    }

    #[test]
    fn perturbation_exceeding_bound_is_rejected() {
        let c = op(&[1.0]);
        let pert = Perturbation {
            bound: ErrorBound::constant(0.1),
            amplitude: Some(ErrorBound::constant(0.2)),
            omega: 1.0,
        };
        assert!(matches!(
            ScoreModel::perturbed(c.clone(), c, pert),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn declared_lipschitz_matches_exact_constant() {
        let c = op(&[2.0, 0.5, 1.0]);
        let mu = op(&[1.0, 1.0, 1.0]);
        let model = ScoreModel::exact(c, mu).unwrap();
        for tau in [1e-3, 0.5, 2.0] {
            let em1 = f64::exp_m1(tau);
            let expected = [2.0f64, 0.5, 1.0]
                .iter()
                .map(|p| (1.0 + em1) * p / (1.0 + em1 * p))
                .fold(0.0, f64::max);
            assert!((Score::lipschitz(&model, tau) - expected).abs() < 1e-14);
        }
        let p = ScoreModel::perturbed(
            op(&[1.0]),
            op(&[1.0]),
            Perturbation::new(0.2, 3.0),
        )
        .unwrap();
        assert!((Score::lipschitz(&p, 0.1) - (1.0 + 0.6)).abs() < 1e-14);
        assert_eq!(p.error_bound(0.1), 0.2);
    }
}
