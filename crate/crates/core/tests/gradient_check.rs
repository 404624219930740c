mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rqa::ad::ScalarField;
use rqa::geometry::{sample_interior, substream, Stream};
use rqa::network::MlpParams;
use rqa::problems::{PdeProblem, ProblemKind};
use rqa::trainer::{weighted_loss_and_gradient, IterationBatches, TrainConfig};
use rqa::weighting::Strategy;

const H: f64 = 1e-4;

fn small_config(kind: ProblemKind, d: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        problem: kind,
        d,
        n_interior: 10,
        n_boundary: 10,
        n_initial: 10,
        width: 10,
        seed,
        ..TrainConfig::default()
    }
}

fn check_gradient(kind: ProblemKind, d: usize, seed: u64) {
    let cfg = small_config(kind, d, seed);
    let problem = cfg.pde().unwrap();
    let params = MlpParams::init(seed, d, problem.time_dependent(), cfg.width).unwrap();
    let batches = IterationBatches::sample(&cfg, &problem, 1).unwrap();
    let strategy = Strategy::Rqa { p: 3.0, q_cut: 0.9, q_target: 0.5 };
    let weights: Vec<Vec<f64>> = batches
        .roles()
        .map(|b| {
            let r: Vec<f64> = pointwise_defects(&problem, &params, b).iter().map(|v| v.abs()).collect();
            strategy.compute(&r).unwrap().adjusted.weights
        })
        .collect();
    let wrefs: Vec<&[f64]> = weights.iter().map(Vec::as_slice).collect();
    let (lb, li) = (0.7, 1.3);
    let sources = problem.sources(&batches.interior).unwrap();
    let (loss, grad) =
        weighted_loss_and_gradient(&problem, &params, &batches, &sources, &wrefs, lb, li).unwrap();
    let reference = pointwise_loss(&problem, &params, &batches, &weights, lb, li);
    assert!(rel_err_sym(loss, reference) < 1e-12, "{loss} vs {reference}");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let i = rng.random_range(0..params.num_params());
        let fd = fd_param_richardson(&problem, &params, &batches, &weights, lb, li, i, H);
        let e = grad_rel_err(grad[i], fd, fd_noise(reference, H));
        worst = worst.max(e);
        assert!(e < 1e-4, "{kind} param {i}: analytic {} vs fd {fd}", grad[i]);
    }
    eprintln!("{kind} d={d}: worst relative gradient error {worst:.2e}");
}

#[test]
fn weighted_loss_gradient_matches_finite_differences() {
    for seed in 0..20 {
        check_gradient(ProblemKind::Parabolic, 5, seed);
        check_gradient(ProblemKind::AllenCahn, 3, seed);
        check_gradient(ProblemKind::Elliptic, 2, seed);
    }
}

#[test]
fn network_bundles_match_finite_differences() {
    let params = MlpParams::init(4, 5, true, 100).unwrap();
    let mut rng = substream(4, Stream::Check, 0);
    let pts = sample_interior(100, 5, Some(1.0), &mut rng).unwrap();
    for i in 0..pts.len() {
        let (x, t) = (pts.x(i), pts.t(i));
        let b = params.derivatives_at(x, t).unwrap();
        let fd = fd_bundle(|x, t| net_value(&params, x, t), x, t, 1e-4);
        assert!(rel_err(b.value, fd.value) < 1e-12);
        for j in 0..5 {
            assert!(rel_err(b.spatial_gradient[j], fd.spatial_gradient[j]) < 1e-4);
        }
        assert!(rel_err(b.laplacian, fd.laplacian) < 1e-4, "{} vs {}", b.laplacian, fd.laplacian);
        assert!(rel_err(b.time_derivative, fd.time_derivative) < 1e-4);
    }
}

#[test]
fn exact_solutions_satisfy_their_equations() {
    for kind in ProblemKind::ALL {
        for d in [2, 5] {
            let problem = PdeProblem::new(kind, d).unwrap();
            let mut rng = substream(7, Stream::Check, d as u64);
            let batch = sample_interior(100, d, problem.horizon(), &mut rng).unwrap();
            let r = problem.interior_residual(&problem.exact_field(), &batch).unwrap();
            assert!(r.iter().all(|v| *v < 1e-6), "{kind} d={d}");
        }
    }
}
