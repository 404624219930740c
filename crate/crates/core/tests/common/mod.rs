#![allow(dead_code)]

use rqa::ad::{Analytic, DerivativeBundle, ScalarField, SmoothField};
use rqa::geometry::{PointBatch, Role};
use rqa::network::MlpParams;
use rqa::problems::PdeProblem;
use rqa::trainer::{evaluate_role, loss_and_gradient, step_size, IterationBatches, OptimizerState, TrainConfig, Trainer};

/// `|a − b| / max(|b|, 1)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err_sym(a: f64, b: f64) -> f64 {
    let den = a.abs().max(b.abs());
    if den == 0.0 {
        0.0
    } else {
        (a - b).abs() / den
    }
}

/// Central differences of a plain-valued field with step `h`.
pub fn fd_bundle<F: Fn(&[f64], f64) -> f64>(f: F, x: &[f64], t: f64, h: f64) -> DerivativeBundle {
    let d = x.len();
    let f0 = f(x, t);
    let mut grad = vec![0.0; d];
    let mut lap = 0.0;
    for j in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f(&xp, t), f(&xm, t));
        grad[j] = (fp - fm) / (2.0 * h);
        lap += (fp - 2.0 * f0 + fm) / (h * h);
    }
    let dt = (f(x, t + h) - f(x, t - h)) / (2.0 * h);
    DerivativeBundle {
        value: f0,
        spatial_gradient: grad,
        laplacian: lap,
        time_derivative: dt,
    }
}

/// Network value through the generic pointwise route.
pub fn net_value(params: &MlpParams, x: &[f64], t: f64) -> f64 {
    params.eval::<f64>(x, &t)
}

/// Signed defects of one role, evaluated pointwise with scalar jets rather
/// than the batched tape.
pub fn pointwise_defects(problem: &PdeProblem, params: &MlpParams, batch: &PointBatch) -> Vec<f64> {
    let field = Analytic(params);
    (0..batch.len())
        .map(|i| {
            let (x, t) = (batch.x(i), batch.t(i));
            match batch.role {
                Role::Interior => {
                    let b = field.derivatives_at(x, t).unwrap();
                    problem.operator(&b, x) - problem.source_at(x, t).unwrap()
                }
                Role::Boundary => net_value(params, x, t) - problem.boundary_value(x, t),
                Role::Initial => net_value(params, x, 0.0) - problem.initial_value(x),
            }
        })
        .collect()
}

/// `Σ w r² + λ_B Σ w r² + λ_I Σ w r²` on the pointwise route.
pub fn pointwise_loss(
    problem: &PdeProblem,
    params: &MlpParams,
    batches: &IterationBatches,
    weights: &[Vec<f64>],
    lambda_b: f64,
    lambda_i: f64,
) -> f64 {
    batches
        .roles()
        .zip(weights)
        .map(|(b, w)| {
            let scale = match b.role {
                Role::Interior => 1.0,
                Role::Boundary => lambda_b,
                Role::Initial => lambda_i,
            };
            let r = pointwise_defects(problem, params, b);
            scale * r.iter().zip(w).map(|(r, w)| w * r * r).sum::<f64>()
        })
        .sum()
}

/// Rounding floor of a central difference of a loss of size `loss` with
/// step `h`.
pub fn fd_noise(loss: f64, h: f64) -> f64 {
    16.0 * f64::EPSILON * loss.abs() / h
}

/// `|g − fd| / (max(|g|, |fd|) + 1e4 · noise)`. Below the noise floor the
/// comparison is effectively absolute.
pub fn grad_rel_err(g: f64, fd: f64, noise: f64) -> f64 {
    (g - fd).abs() / (g.abs().max(fd.abs()) + 1e4 * noise)
}

/// Central difference of the pointwise loss in parameter `index`.
pub fn fd_param(
    problem: &PdeProblem,
    params: &MlpParams,
    batches: &IterationBatches,
    weights: &[Vec<f64>],
    lambda_b: f64,
    lambda_i: f64,
    index: usize,
    h: f64,
) -> f64 {
    let theta = params.to_flat();
    let at = |delta: f64| {
        let mut p = params.clone();
        let mut flat = theta.clone();
        flat[index] += delta;
        p.set_flat(&flat).unwrap();
        pointwise_loss(problem, &p, batches, weights, lambda_b, lambda_i)
    };
    (at(h) - at(-h)) / (2.0 * h)
}

/// Richardson extrapolation of [`fd_param`] from steps `h` and `h/2`.
pub fn fd_param_richardson(
    problem: &PdeProblem,
    params: &MlpParams,
    batches: &IterationBatches,
    weights: &[Vec<f64>],
    lambda_b: f64,
    lambda_i: f64,
    index: usize,
    h: f64,
) -> f64 {
    let coarse = fd_param(problem, params, batches, weights, lambda_b, lambda_i, index, h);
    let fine = fd_param(problem, params, batches, weights, lambda_b, lambda_i, index, h / 2.0);
    (4.0 * fine - coarse) / 3.0
}

/// Plain PINN: mean-square residual per role, gradient from the same
/// derivative engine, same optimizer and schedule.
pub fn reference_pinn(cfg: &TrainConfig) -> Vec<f64> {
    let problem = cfg.pde().unwrap();
    let mut params = Trainer::new(cfg.clone()).unwrap().params;
    let mut opt = OptimizerState::new(cfg.optimizer, params.num_params());
    let mut losses = Vec::new();
    for k in 1..=cfg.iterations {
        let batches = IterationBatches::sample(cfg, &problem, k).unwrap();
        let sources = problem.sources(&batches.interior).unwrap();
        let evals: Vec<_> = batches
            .roles()
            .map(|b| evaluate_role(&problem, &params, b, Some(&sources)).unwrap())
            .collect();
        let inv: Vec<Vec<f64>> = evals
            .iter()
            .map(|e| vec![1.0 / e.defects.len() as f64; e.defects.len()])
            .collect();
        let wrefs: Vec<&[f64]> = inv.iter().map(Vec::as_slice).collect();
        let (loss, grad) =
            loss_and_gradient(&problem, &params, &evals, &wrefs, cfg.lambda_b, cfg.lambda_i, k).unwrap();

        // Mean-square form.
        let mean_sq = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
        let lambdas = [1.0, cfg.lambda_b, cfg.lambda_i];
        let eq4: f64 = evals.iter().zip(lambdas).map(|(e, l)| l * mean_sq(&e.defects)).sum();
        assert!(rel_err_sym(loss, eq4) < 1e-13, "{loss} vs {eq4}");

        opt.step(&mut params, &grad, step_size(k, cfg.iterations));
        losses.push(loss);
    }
    losses
}
