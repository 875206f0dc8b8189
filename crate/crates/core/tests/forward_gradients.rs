use funclangevin::forward::{
    apply_forward, grad_log_likelihood, neg_log_likelihood, stochastic_grad_log_likelihood,
    ForwardProblem, Likelihood, NoiseModel, Operator, PosteriorSpec, RosenbrockTarget,
};
use funclangevin::spectral::{CoeffVec, GaussianMeasure, SpectralOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn specs(rng: &mut ChaCha8Rng) -> Vec<PosteriorSpec> {
    let dim = 6;
    let prior = GaussianMeasure::centered(SpectralOperator::identity(dim));
    let mut out = Vec::new();
    for op in [
        Operator::ModeObservation { d0: 3 },
        Operator::QuadraticMap { d0: 4 },
        Operator::Zero { d0: 2, n_obs: 3 },
    ] {
        let y = (0..op.n_obs()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = ForwardProblem::new(op, NoiseModel::gaussian(0.7).unwrap(), y).unwrap();
        out.push(PosteriorSpec::new(prior.clone(), Likelihood::Forward(p)).unwrap());
    }
    out.push(
        PosteriorSpec::new(
            GaussianMeasure::centered(SpectralOperator::identity(2)),
            Likelihood::Rosenbrock(RosenbrockTarget),
        )
        .unwrap(),
    );
    out
}

fn probe(rng: &mut ChaCha8Rng, dim: usize) -> CoeffVec {
    CoeffVec::new((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for spec in specs(&mut rng) {
        for _ in 0..50 {
            let x = probe(&mut rng, spec.dim());
            let g = grad_log_likelihood(&spec, &x).unwrap();
            let scale = g.norm().max(1.0);
            for j in 0..x.dim() {
                let mut up = x.clone();
                let mut down = x.clone();
                up[j] += H;
                down[j] -= H;
                let fd = (neg_log_likelihood(&spec, &up).unwrap()
                    - neg_log_likelihood(&spec, &down).unwrap())
                    / (2.0 * H);
                assert!(
                    (fd + g[j]).abs() <= 1e-5 * scale,
                    "{:?} mode {j}: fd {fd} vs {}",
                    spec.likelihood,
                    -g[j]
                );
            }
        }
    }
}

#[test]
fn operators_have_no_sensitivity_above_d0() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for spec in specs(&mut rng) {
        let Likelihood::Forward(problem) = &spec.likelihood else {
            continue;
        };
        let d0 = problem.operator.d0();
        for _ in 0..20 {
            let x = probe(&mut rng, spec.dim());
            let base = apply_forward(problem, &x).unwrap();
            for j in d0..x.dim() {
                let mut up = x.clone();
                up[j] += H;
                let moved = apply_forward(problem, &up).unwrap();
                for (a, b) in moved.iter().zip(&base) {
                    assert!(((a - b) / H).abs() <= 1e-10);
                }
            }
        }
    }
}

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    (0u32..(1 << n))
        .filter(|m| m.count_ones() as usize == size)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

#[test]
fn minibatch_gradient_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let p = ForwardProblem::new(Operator::QuadraticMap { d0: 5 }, NoiseModel::gaussian(0.3).unwrap(), y).unwrap();
    let spec = PosteriorSpec::new(
        GaussianMeasure::centered(SpectralOperator::identity(7)),
        Likelihood::Forward(p),
    )
    .unwrap();
    let x = probe(&mut rng, 7);
    let full = grad_log_likelihood(&spec, &x).unwrap();
    for size in 1..=5 {
        let all = subsets(5, size);
        let mut mean = vec![0.0; 7];
        for s in &all {
            let g = stochastic_grad_log_likelihood(&spec, &x, s).unwrap();
            for (m, v) in mean.iter_mut().zip(g.iter()) {
                *m += v / all.len() as f64;
            }
        }
        for (m, f) in mean.iter().zip(full.iter()) {
            assert!((m - f).abs() <= 1e-12 * (1.0 + f.abs()), "size {size}: {m} vs {f}");
        }
    }
}
