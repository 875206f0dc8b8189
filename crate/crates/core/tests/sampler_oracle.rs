use funclangevin::diagnostics::{moments, Estimate};
use funclangevin::forward::{ForwardProblem, Likelihood, NoiseModel, Operator, PosteriorSpec};
use funclangevin::oracle::{grid_quadrature_2d, linear_gaussian_posterior, reference_chain, step_size_cap};
use funclangevin::sampler::{run_chain, ChainConfig};
use funclangevin::score::ScoreModel;
use funclangevin::spectral::{CoeffVec, EigenLaw, GaussianMeasure, SpectralOperator};

fn linear_spec(prior: SpectralOperator, d0: usize, s2: f64, y: Vec<f64>) -> PosteriorSpec {
    let p = ForwardProblem::new(Operator::ModeObservation { d0 }, NoiseModel::gaussian(s2).unwrap(), y).unwrap();
    PosteriorSpec::new(GaussianMeasure::centered(prior), Likelihood::Forward(p)).unwrap()
}

fn combined(a: &Estimate, b: &Estimate) -> f64 {
    (a.se * a.se + b.se * b.se).sqrt()
}

/// With `C = C_μ0` and a mode read-out, mode `j` follows
/// `x' = (1 − γa)x + γλy/σ² + √(2γλ) z` with `a = 1 + λ/σ²`, whose stationary
/// law has mean `λy/(σ²a)` and variance `2λ/(a(2 − γa))`.
#[test]
fn chain_matches_discrete_stationary_law_and_conjugate_posterior() {
    let dim = 4;
    let s2 = 0.5;
    let gamma = 2e-3;
    let prior = SpectralOperator::from_law(EigenLaw::power(2.0), dim).unwrap();
    let y = vec![1.0, -0.4];
    let spec = linear_spec(prior.clone(), 2, s2, y.clone());
    let score = ScoreModel::exact(prior.clone(), prior.clone()).unwrap();
    let cfg = ChainConfig::new(1.0, gamma, 0.01, 1_000_000, 2024).with_thinning(10_000, 5);
    let store = run_chain(&cfg, &score, &spec, CoeffVec::zeros(dim)).unwrap();
    let m = moments(&store).unwrap();
    let post = linear_gaussian_posterior(&spec).unwrap();
    for j in 0..dim {
        let lam = prior.eigenvalues()[j];
        let obs = if j < 2 { 1.0 / s2 } else { 0.0 };
        let a = 1.0 + lam * obs;
        let mean = if j < 2 { lam * y[j] * obs / a } else { 0.0 };
        let var = 2.0 * lam / (a * (2.0 - gamma * a));
        assert!(m.mean[j].within(mean, 3.0), "mode {j} mean {:?} vs {mean}", m.mean[j]);
        assert!(m.variance[j].within(var, 3.0), "mode {j} var {:?} vs {var}", m.variance[j]);
        assert!((mean - post.means[j]).abs() < 1e-12);
        // The discrete variance is inflated by the factor 2/(2 − γa) = 1 + O(γ).
        assert!((var / post.variances[j] - 1.0).abs() <= gamma * a);
    }
}

#[test]
fn reference_chain_is_validated_against_conjugate_oracle() {
    let prior = SpectralOperator::new(vec![1.0, 0.5]).unwrap();
    let spec = linear_spec(prior.clone(), 2, 1.0, vec![1.0, -0.5]);
    let score = ScoreModel::exact(prior.clone(), prior).unwrap();
    let cap = step_size_cap(&spec, &score, 1.0, 0.01).unwrap();
    let gamma = cap / 4.0;
    let n = 1_000_000;
    let a = reference_chain(&spec, &score, 1.0, 0.01, gamma, n, 1).unwrap();
    let b = reference_chain(&spec, &score, 1.0, 0.01, gamma, n, 2).unwrap();
    let half = reference_chain(&spec, &score, 1.0, 0.01, gamma / 2.0, n, 3).unwrap();
    assert!(a.meta.as_ref().unwrap().reference);
    let post = linear_gaussian_posterior(&spec).unwrap();
    let (ma, mb, mh) = (moments(&a).unwrap(), moments(&b).unwrap(), moments(&half).unwrap());
    for j in 0..2 {
        assert!(ma.mean[j].within(post.means[j], 3.0), "{:?} vs {}", ma.mean[j], post.means[j]);
        assert!(ma.variance[j].within(post.variances[j], 3.0), "{:?} vs {}", ma.variance[j], post.variances[j]);
        assert!((ma.mean[j].value - mb.mean[j].value).abs() < 3.0 * combined(&ma.mean[j], &mb.mean[j]));
        assert!((ma.variance[j].value - mb.variance[j].value).abs() < 3.0 * combined(&ma.variance[j], &mb.variance[j]));
        assert!((ma.mean[j].value - mh.mean[j].value).abs() < 3.0 * combined(&ma.mean[j], &mh.mean[j]));
        assert!((ma.variance[j].value - mh.variance[j].value).abs() < 3.0 * combined(&ma.variance[j], &mh.variance[j]));
    }
}

/// For a two-mode quadratic read-out the posterior is a 2D density, so the
/// reference chain can be checked against quadrature.
#[test]
fn reference_chain_matches_quadrature_on_quadratic_map() {
    let mu0 = [0.25, 0.25];
    let s2 = 0.5;
    let y = [1.0, 0.5];
    let prior = SpectralOperator::new(mu0.to_vec()).unwrap();
    let p = ForwardProblem::new(Operator::QuadraticMap { d0: 2 }, NoiseModel::gaussian(s2).unwrap(), y.to_vec()).unwrap();
    let spec = PosteriorSpec::new(GaussianMeasure::centered(prior.clone()), Likelihood::Forward(p)).unwrap();
    let score = ScoreModel::exact(prior.clone(), prior).unwrap();
    let cap = step_size_cap(&spec, &score, 1.0, 0.01).unwrap();
    let store = reference_chain(&spec, &score, 1.0, 0.01, cap / 4.0, 4_000_000, 99).unwrap();
    let m = moments(&store).unwrap();

    let log_post = |a: f64, b: f64| {
        let r0 = y[0] - (a * a + 0.5 * a);
        let r1 = y[1] - (b * b + 0.5 * b);
        -0.5 * (a * a / mu0[0] + b * b / mu0[1]) - (r0 * r0 + r1 * r1) / (2.0 * s2)
    };
    let grid = grid_quadrature_2d(log_post, (-3.0, 3.0), (-3.0, 3.0), 512).unwrap();
    let g = grid.moments();
    for j in 0..2 {
        assert!(m.mean[j].within(g.mean[j], 3.0), "mode {j} mean {:?} vs {}", m.mean[j], g.mean[j]);
        assert!(m.variance[j].within(g.variance[j], 3.0), "mode {j} var {:?} vs {}", m.variance[j], g.variance[j]);
    }
    assert!(m.cross[0].estimate.within(g.covariance, 3.0));
}
