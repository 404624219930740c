//! Training loop for the penalized, adaptively weighted collocation loss
//!
//! ```text
//! L(θ) = Σ_i w_i r_i(θ)² + λ_B Σ_j w_j^B r_j^B(θ)² + λ_I Σ_k w_k^I r_k^I(θ)²
//! ```
//!
//! Weights are recomputed every iteration from the residuals at the current
//! parameters and then held fixed while the loss is differentiated.

use std::time::Instant;

use ndarray::Array2;

use crate::error::{Result, RqaError};
use crate::geometry::{sample_boundary, sample_initial, sample_interior, substream, PointBatch, Role};
use crate::metrics::{TestSet, DEFAULT_TEST_POINTS};
use crate::network::{InitScheme, JetAdjoint, JetTape, MlpParams, Order, DEFAULT_WIDTH};
use crate::problems::{PdeProblem, ProblemKind};
use crate::weighting::{Strategy, WeightComputation};

/// `10^{−2−3j/1000}` with `j = ⌊(k−1)·1000/n⌋`, the index of the equal-length
/// segment (out of 1000) containing iteration `k ∈ [1, n]`.
pub fn step_size(k: usize, n: usize) -> f64 {
    debug_assert!(k >= 1 && k <= n);
    let j = ((k.saturating_sub(1)) as u128 * 1000 / n.max(1) as u128).min(999) as f64;
    10f64.powf(-2.0 - 3.0 * j / 1000.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Optimizer {
    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Adam { .. } => "adam",
            Optimizer::Sgd => "sgd",
        }
    }
}

/// Optimizer moments.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, n_params: usize) -> Self {
        OptimizerState {
            kind,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grad: &[f64], lr: f64) {
        self.t += 1;
        match self.kind {
            Optimizer::Sgd => params.for_each_param_mut(|i, w| *w -= lr * grad[i]),
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                let (m, v) = (&mut self.m, &mut self.v);
                params.for_each_param_mut(|i, w| {
                    let g = grad[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    *w -= lr * mhat / (vhat.sqrt() + epsilon);
                });
            }
        }
    }
}

/// Wall-clock recording for history rows. `Off` writes zeros so that
/// histories are byte-reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timing {
    Wall,
    Off,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub problem: ProblemKind,
    pub d: usize,
    pub strategy: Strategy,
    pub iterations: usize,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_initial: usize,
    pub lambda_b: f64,
    pub lambda_i: f64,
    pub width: usize,
    pub init: InitScheme,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub eval_every: usize,
    pub n_test: usize,
    pub timing: Timing,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            problem: ProblemKind::Elliptic,
            d: 2,
            strategy: Strategy::Rqa {
                p: 3.0,
                q_cut: 0.9,
                q_target: 0.5,
            },
            iterations: 10_000,
            n_interior: 1000,
            n_boundary: 1000,
            n_initial: 50,
            lambda_b: 1.0,
            lambda_i: 1.0,
            width: DEFAULT_WIDTH,
            init: InitScheme::default(),
            optimizer: Optimizer::default(),
            seed: 0,
            eval_every: 10,
            n_test: DEFAULT_TEST_POINTS,
            timing: Timing::Wall,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RqaError::invalid(m.to_string()));
        if self.d == 0 {
            return bad("d must be >= 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.n_interior == 0 || self.n_boundary == 0 || self.n_initial == 0 {
            return bad("point budgets must be >= 1");
        }
        if !(self.lambda_b >= 0.0 && self.lambda_i >= 0.0) {
            return bad("penalty weights must be >= 0");
        }
        if self.width == 0 || self.eval_every == 0 || self.n_test == 0 {
            return bad("width, eval_every and n_test must be >= 1");
        }
        self.strategy.validate()
    }

    pub fn pde(&self) -> Result<PdeProblem> {
        PdeProblem::new(self.problem, self.d)
    }
}

/// Collocation batches of one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationBatches {
    pub interior: PointBatch,
    pub boundary: PointBatch,
    /// Absent for stationary problems.
    pub initial: Option<PointBatch>,
}

impl IterationBatches {
    /// Draws iteration `k`'s batches from the per-role substreams of `seed`.
    /// Independent of the strategy, so runs sharing a seed share batches.
    pub fn sample(config: &TrainConfig, problem: &PdeProblem, k: usize) -> Result<Self> {
        let h = problem.horizon();
        let idx = k as u64;
        let interior = sample_interior(
            config.n_interior,
            problem.d,
            h,
            &mut substream(config.seed, Role::Interior.stream(), idx),
        )?;
        let boundary = sample_boundary(
            config.n_boundary,
            problem.d,
            h,
            &mut substream(config.seed, Role::Boundary.stream(), idx),
        )?;
        let initial = if problem.time_dependent() {
            Some(sample_initial(
                config.n_initial,
                problem.d,
                &mut substream(config.seed, Role::Initial.stream(), idx),
            )?)
        } else {
            None
        };
        Ok(IterationBatches {
            interior,
            boundary,
            initial,
        })
    }

    pub fn roles(&self) -> impl Iterator<Item = &PointBatch> {
        std::iter::once(&self.interior)
            .chain(std::iter::once(&self.boundary))
            .chain(self.initial.as_ref())
    }
}

/// One role's residual and its weight, aligned by point.
#[derive(Clone, Copy, Debug)]
pub struct RoleTerm<'a> {
    pub residuals: &'a [f64],
    pub weights: &'a [f64],
}

impl RoleTerm<'_> {
    fn value(&self, what: &'static str) -> Result<f64> {
        if self.residuals.len() != self.weights.len() {
            return Err(RqaError::LengthMismatch {
                what,
                got: self.weights.len(),
                expected: self.residuals.len(),
            });
        }
        Ok(weighted_square_sum(self.residuals, self.weights))
    }
}

fn weighted_square_sum(residuals: &[f64], weights: &[f64]) -> f64 {
    residuals
        .iter()
        .zip(weights)
        .map(|(r, w)| w * r * r)
        .sum()
}

/// `Σ w r² + λ_B Σ w^B (r^B)² + λ_I Σ w^I (r^I)²`.
pub fn assemble_loss(
    interior: RoleTerm<'_>,
    boundary: RoleTerm<'_>,
    initial: Option<RoleTerm<'_>>,
    lambda_b: f64,
    lambda_i: f64,
) -> Result<f64> {
    let mut loss = interior.value("interior weights")?;
    loss += lambda_b * boundary.value("boundary weights")?;
    if let Some(init) = initial {
        loss += lambda_i * init.value("initial weights")?;
    }
    Ok(loss)
}

/// Supplies per-role weights from detached residuals. Called exactly once per
/// role per iteration.
pub trait WeightProvider {
    fn weights(&mut self, iteration: usize, role: Role, residuals: &[f64]) -> Result<WeightComputation>;
}

impl WeightProvider for Strategy {
    fn weights(&mut self, _iteration: usize, _role: Role, residuals: &[f64]) -> Result<WeightComputation> {
        self.compute(residuals)
    }
}

/// Hooks into the training loop; all methods default to no-ops.
pub trait TrainObserver {
    fn on_batches(&mut self, _iteration: usize, _batches: &IterationBatches) {}
    fn on_weights(
        &mut self,
        _iteration: usize,
        _batch: &PointBatch,
        _residuals: &[f64],
        _weights: &WeightComputation,
    ) {
    }
    fn on_record(&mut self, _row: &HistoryRow) {}
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub loss: f64,
    pub l2_error: f64,
    pub max_error: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub seed: u64,
    pub final_l2: f64,
    pub final_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub rows: Vec<HistoryRow>,
    pub summary: RunSummary,
}

/// Network outputs and signed defects for one role.
pub struct RoleEval {
    pub role: Role,
    tape: JetTape,
    /// `N[u] − f`, `u − g` or `u − h`.
    pub defects: Vec<f64>,
    /// Interior only: `∂N/∂(bundle)` per point.
    partials: Vec<crate::problems::OperatorPartials>,
}

impl RoleEval {
    pub fn residuals(&self) -> Vec<f64> {
        self.defects.iter().map(|d| d.abs()).collect()
    }
}

fn diverged(iteration: usize, role: Role, e: impl std::fmt::Display) -> RqaError {
    RqaError::Divergence {
        iteration,
        role,
        detail: e.to_string(),
    }
}

/// Forward pass and defects for `batch`. `sources` is required for interior batches.
pub fn evaluate_role(
    problem: &PdeProblem,
    params: &MlpParams,
    batch: &PointBatch,
    sources: Option<&[f64]>,
) -> Result<RoleEval> {
    let inputs = batch.network_inputs();
    match batch.role {
        Role::Interior => {
            let sources = sources.ok_or_else(|| RqaError::invalid("interior batch needs sources"))?;
            let tape = params.forward_jet(inputs.view(), Order::Second)?;
            let bundles: Vec<_> = (0..batch.len()).map(|i| tape.output.bundle(i)).collect();
            let defects = problem.interior_defects(batch, &bundles, sources);
            let partials = bundles
                .iter()
                .enumerate()
                .map(|(i, b)| problem.operator_partials(b, batch.x(i)))
                .collect();
            Ok(RoleEval {
                role: batch.role,
                tape,
                defects,
                partials,
            })
        }
        Role::Boundary | Role::Initial => {
            let tape = params.forward_jet(inputs.view(), Order::Value)?;
            let defects = problem.data_defects(batch, &tape.output.value);
            Ok(RoleEval {
                role: batch.role,
                tape,
                defects,
                partials: Vec::new(),
            })
        }
    }
}

/// `scale · Σ w d²` and its adjoint with respect to the network outputs.
fn role_adjoint(eval: &RoleEval, weights: &[f64], scale: f64, n_in: usize, d: usize) -> (f64, JetAdjoint) {
    let n = eval.defects.len();
    let loss = scale * weighted_square_sum(&eval.defects, weights);
    let coeff: Vec<f64> = eval
        .defects
        .iter()
        .zip(weights)
        .map(|(r, w)| 2.0 * scale * w * r)
        .collect();
    match eval.role {
        Role::Interior => {
            let mut grad = Array2::zeros((n, n_in));
            let mut value = vec![0.0; n];
            let mut lap = vec![0.0; n];
            for (i, (c, p)) in coeff.iter().zip(&eval.partials).enumerate() {
                value[i] = c * p.value;
                lap[i] = c * p.laplacian;
                for j in 0..d {
                    grad[[i, j]] = c * p.spatial_gradient[j];
                }
                if n_in > d {
                    grad[[i, d]] = c * p.time_derivative;
                }
            }
            (
                loss,
                JetAdjoint {
                    value,
                    grad: Some(grad),
                    laplacian: Some(lap),
                },
            )
        }
        _ => (
            loss,
            JetAdjoint {
                value: coeff,
                grad: None,
                laplacian: None,
            },
        ),
    }
}

/// Weighted loss over evaluated roles and its parameter gradient. Gradients
/// are reduced in role order (interior, boundary, initial).
pub fn loss_and_gradient(
    problem: &PdeProblem,
    params: &MlpParams,
    evals: &[RoleEval],
    weights: &[&[f64]],
    lambda_b: f64,
    lambda_i: f64,
    iteration: usize,
) -> Result<(f64, Vec<f64>)> {
    let n_in = params.input_dim();
    let mut total = 0.0;
    let mut grad = vec![0.0; params.num_params()];
    for (eval, w) in evals.iter().zip(weights) {
        if w.len() != eval.defects.len() {
            return Err(RqaError::LengthMismatch {
                what: "role weights",
                got: w.len(),
                expected: eval.defects.len(),
            });
        }
        let scale = match eval.role {
            Role::Interior => 1.0,
            Role::Boundary => lambda_b,
            Role::Initial => lambda_i,
        };
        let (loss, adjoint) = role_adjoint(eval, w, scale, n_in, problem.d);
        if !loss.is_finite() {
            return Err(diverged(iteration, eval.role, "non-finite loss"));
        }
        let g = params.backward(&eval.tape, &adjoint)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(diverged(iteration, eval.role, "non-finite gradient"));
        }
        total += loss;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((total, grad))
}

/// Fixed-weight loss and gradient on `batches`; re-runs the forward pass.
pub fn weighted_loss_and_gradient(
    problem: &PdeProblem,
    params: &MlpParams,
    batches: &IterationBatches,
    sources: &[f64],
    weights: &[&[f64]],
    lambda_b: f64,
    lambda_i: f64,
) -> Result<(f64, Vec<f64>)> {
    let evals = batches
        .roles()
        .map(|b| evaluate_role(problem, params, b, Some(sources)))
        .collect::<Result<Vec<_>>>()?;
    loss_and_gradient(problem, params, &evals, weights, lambda_b, lambda_i, 0)
}

/// Stateful training run.
pub struct Trainer {
    pub config: TrainConfig,
    pub problem: PdeProblem,
    pub params: MlpParams,
    pub optimizer: OptimizerState,
    pub test_set: TestSet,
    pub iteration: usize,
    pub rows: Vec<HistoryRow>,
    clock: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let problem = config.pde()?;
        let params = MlpParams::init_with(
            config.init,
            config.seed,
            problem.d,
            problem.time_dependent(),
            config.width,
        )?;
        let optimizer = OptimizerState::new(config.optimizer, params.num_params());
        let test_set = TestSet::new(&problem, config.n_test, config.seed)?;
        Ok(Trainer {
            config,
            problem,
            params,
            optimizer,
            test_set,
            iteration: 0,
            rows: Vec::new(),
            clock: Instant::now(),
        })
    }

    /// Runs one iteration; returns the loss at the pre-update parameters.
    pub fn step<W: WeightProvider, O: TrainObserver>(&mut self, weights: &mut W, observer: &mut O) -> Result<f64> {
        let k = self.iteration + 1;
        let n = self.config.iterations;
        let batches = IterationBatches::sample(&self.config, &self.problem, k)?;
        observer.on_batches(k, &batches);
        let sources = self.problem.sources(&batches.interior)?;

        let mut evals = Vec::with_capacity(3);
        for batch in batches.roles() {
            let eval = evaluate_role(&self.problem, &self.params, batch, Some(&sources))
                .map_err(|e| diverged(k, batch.role, e))?;
            if eval.defects.iter().any(|d| !d.is_finite()) {
                return Err(diverged(k, batch.role, "non-finite residual"));
            }
            evals.push(eval);
        }

        let mut computed = Vec::with_capacity(evals.len());
        for (eval, batch) in evals.iter().zip(batches.roles()) {
            let residuals = eval.residuals();
            let w = weights.weights(k, eval.role, &residuals)?;
            if w.adjusted.len() != residuals.len() {
                return Err(RqaError::LengthMismatch {
                    what: "provider weights",
                    got: w.adjusted.len(),
                    expected: residuals.len(),
                });
            }
            observer.on_weights(k, batch, &residuals, &w);
            computed.push(w);
        }
        let wrefs: Vec<&[f64]> = computed.iter().map(|w| w.adjusted.weights.as_slice()).collect();
        let (loss, grad) = loss_and_gradient(
            &self.problem,
            &self.params,
            &evals,
            &wrefs,
            self.config.lambda_b,
            self.config.lambda_i,
            k,
        )?;

        self.optimizer.step(&mut self.params, &grad, step_size(k, n));
        if !self.params.all_finite() {
            return Err(diverged(k, Role::Interior, "non-finite parameters after update"));
        }
        self.iteration = k;

        if k % self.config.eval_every == 0 || k == n {
            let (l2, mx) = self
                .test_set
                .evaluate(&self.params)
                .map_err(|e| diverged(k, Role::Interior, e))?;
            let wall_ms = match self.config.timing {
                Timing::Wall => {
                    let ms = self.clock.elapsed().as_secs_f64() * 1e3;
                    self.clock = Instant::now();
                    ms
                }
                Timing::Off => 0.0,
            };
            let row = HistoryRow {
                iter: k,
                loss,
                l2_error: l2,
                max_error: mx,
                wall_ms,
            };
            observer.on_record(&row);
            self.rows.push(row);
        }
        Ok(loss)
    }

    pub fn run<W: WeightProvider, O: TrainObserver>(mut self, weights: &mut W, observer: &mut O) -> Result<(MlpParams, RunRecord)> {
        self.clock = Instant::now();
        while self.iteration < self.config.iterations {
            self.step(weights, observer)?;
        }
        let last = self.rows.last().expect("final iteration is always evaluated");
        let summary = RunSummary {
            strategy: self.config.strategy,
            seed: self.config.seed,
            final_l2: last.l2_error,
            final_max: last.max_error,
        };
        Ok((
            self.params,
            RunRecord {
                config: self.config,
                rows: self.rows,
                summary,
            },
        ))
    }
}

/// Trains with the configured strategy.
pub fn train(config: TrainConfig) -> Result<(MlpParams, RunRecord)> {
    let mut strategy = config.strategy;
    Trainer::new(config)?.run(&mut strategy, &mut NoObserver)
}
