use funclangevin::diagnostics::rate_fit;
use funclangevin::score::{
    denoiser, diffuse, dsm_target, exact_score, score_mismatch, DiffusionTime, Score, ScoreModel,
};
use funclangevin::spectral::{sample_gaussian, CoeffVec, EigenLaw, GaussianMeasure, SpectralOperator};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn op(v: &[f64]) -> SpectralOperator {
    SpectralOperator::new(v.to_vec()).unwrap()
}

fn operators() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|d| {
        (
            prop::collection::vec(0.01f64..5.0, d),
            prop::collection::vec(0.01f64..5.0, d),
            prop::collection::vec(-10.0f64..10.0, d),
        )
    })
}

proptest! {
    // The closed-form score equals the conditional-mean form built from the denoiser,
    // to 1e-12 relative plus the rounding of `x − e^{−τ/2}·denoiser` amplified by
    // `1/(1 − e^{−τ})`.
    #[test]
    fn tweedie_identity((c, m, x) in operators(), log_tau in -6.0f64..1.3) {
        let tau = 10f64.powf(log_tau);
        let (c, m) = (op(&c), op(&m));
        let x = CoeffVec::new(x).unwrap();
        let s = exact_score(DiffusionTime::new(tau).unwrap(), &x, &c, &m).unwrap();
        let d = denoiser(tau, &x, &c, &m).unwrap();
        let k = 1.0 / -(-tau).exp_m1();
        let half = (-tau / 2.0).exp();
        for j in 0..x.dim() {
            let tweedie = -k * (x[j] - half * d[j]);
            let rounding = 4.0 * f64::EPSILON * k * (x[j].abs() + half * d[j].abs());
            prop_assert!(
                (s[j] - tweedie).abs() <= 1e-12 * s[j].abs() + rounding,
                "{} vs {}", s[j], tweedie
            );
        }
    }

    #[test]
    fn score_is_linear((c, m, x) in operators(), a in -3.0f64..3.0, b in -3.0f64..3.0, tau in 1e-4f64..5.0) {
        let model = ScoreModel::exact(op(&c), op(&m)).unwrap();
        let x = CoeffVec::new(x).unwrap();
        let y = CoeffVec::new(x.iter().rev().copied().collect()).unwrap();
        let lhs = model.eval(tau, &x.lin_comb(a, &y, b).unwrap());
        let rhs = model.eval(tau, &x).lin_comb(a, &model.eval(tau, &y), b).unwrap();
        for j in 0..x.dim() {
            prop_assert!((lhs[j] - rhs[j]).abs() <= 1e-10 * (1.0 + rhs[j].abs()));
        }
    }

    #[test]
    fn declared_lipschitz_holds((c, m, x) in operators(), tau in 1e-6f64..10.0) {
        let model = ScoreModel::exact(op(&c), op(&m)).unwrap();
        let x = CoeffVec::new(x).unwrap();
        let y = x.scaled(-0.3);
        let diff = model.eval(tau, &x).sub(&model.eval(tau, &y)).unwrap().norm();
        prop_assert!(diff <= model.lipschitz(tau) * x.sub(&y).unwrap().norm() * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn mismatch_is_score_plus_prior_drift((c, m, x) in operators(), tau in 1e-5f64..3.0) {
        let (c, m) = (op(&c), op(&m));
        let x = CoeffVec::new(x).unwrap();
        let t = DiffusionTime::new(tau).unwrap();
        let s = exact_score(t, &x, &c, &m).unwrap();
        let mm = score_mismatch(t, &x, &c, &m).unwrap();
        for j in 0..x.dim() {
            let drift = c.eigenvalues()[j] / m.eigenvalues()[j] * x[j];
            prop_assert!((mm[j] - (drift + s[j])).abs() <= 1e-9 * (1.0 + drift.abs()));
        }
    }
}

/// Regresses the denoising target on `X_τ` for a single mode. The fitted
/// slope is `−d E[target | X_τ]/dx`, which must equal the score factor.
#[test]
fn dsm_regression_recovers_score() {
    let c = op(&[0.6]);
    let c_mu0 = op(&[1.5]);
    let prior = GaussianMeasure::centered(c_mu0.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for tau in [0.05, 0.5, 2.0] {
        let t = DiffusionTime::new(tau).unwrap();
        let n = 400_000;
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let x0 = sample_gaussian(&prior, &mut rng);
            let xt = diffuse(&x0, t, &c, &mut rng).unwrap();
            let target = dsm_target(tau, &x0, &xt).unwrap();
            pairs.push((xt[0], target[0]));
        }
        let nf = n as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
        let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        let resid: f64 = pairs
            .iter()
            .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
            .sum::<f64>()
            / (nf - 2.0);
        let se = (resid / sxx).sqrt();
        let s = exact_score(t, &CoeffVec::new(vec![1.0]).unwrap(), &c, &c_mu0).unwrap()[0];
        assert!((slope + s).abs() < 4.0 * se, "tau {tau}: slope {slope} vs {} ± {se}", -s);
    }
}

/// Binned conditional means of `X0` given `X_τ` match the denoiser.
#[test]
fn denoiser_matches_binned_conditional_mean() {
    let c = op(&[1.0]);
    let c_mu0 = op(&[0.4]);
    let tau = 0.7;
    let t = DiffusionTime::new(tau).unwrap();
    let prior = GaussianMeasure::centered(c_mu0.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 500_000;
    let mut bins = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); 10];
    for _ in 0..n {
        let x0 = sample_gaussian(&prior, &mut rng);
        let xt = diffuse(&x0, t, &c, &mut rng).unwrap();
        let b = ((xt[0] + 1.0) / 0.2).floor();
        if (0.0..10.0).contains(&b) {
            let e = &mut bins[b as usize];
            e.0 += xt[0];
            e.1 += x0[0];
            e.2 += x0[0] * x0[0];
            e.3 += 1;
        }
    }
    for (sx, s0, s00, count) in bins {
        let k = count as f64;
        let centre = sx / k;
        let mean = s0 / k;
        let var = s00 / k - mean * mean;
        let want = denoiser(tau, &CoeffVec::new(vec![centre]).unwrap(), &c, &c_mu0).unwrap()[0];
        // Within-bin spread of X_τ shifts the mean by at most slope · bin width.
        let slack = 4.0 * (var / k).sqrt() + 1e-3;
        assert!((mean - want).abs() < slack, "bin at {centre}: {mean} vs {want}");
    }
}

#[test]
fn mismatch_decays_quadratically() {
    let c = SpectralOperator::from_law(EigenLaw::power(2.0), 16).unwrap();
    let c_mu0 = SpectralOperator::from_law(EigenLaw::Power { exponent: 2.0, scale: 2.0 }, 16).unwrap();
    let x = CoeffVec::new((1..=16).map(|j| 1.0 / j as f64).collect()).unwrap();
    let points: Vec<(f64, f64)> = (0..9)
        .map(|i| {
            let tau = 1e-4 * 10f64.powf(i as f64 / 4.0);
            let m = score_mismatch(DiffusionTime::new(tau).unwrap(), &x, &c, &c_mu0).unwrap();
            (tau, m.norm().powi(2))
        })
        .collect();
    let fit = rate_fit(&points).unwrap();
    assert!((fit.slope - 2.0).abs() < 0.1, "{fit:?}");
    let norms: Vec<(f64, f64)> = points.iter().map(|&(t, sq)| (t, sq.sqrt())).collect();
    let fit = rate_fit(&norms).unwrap();
    assert!((fit.slope - 1.0).abs() < 0.05, "{fit:?}");

    for tau in [1e-4, 1e-3, 1e-2] {
        let m = score_mismatch(DiffusionTime::new(tau).unwrap(), &x, &c, &c).unwrap();
        assert!(m.iter().all(|v| *v == 0.0));
    }
}
