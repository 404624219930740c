//! Acceptance criteria. Prints one line per criterion and exits nonzero if any
//! fails. Criterion 8 runs only with `RQA_EXTENDED=1`.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rqa::ad::ScalarField;
use rqa::bench::{self, load_config, run_single, run_sweep, ExperimentConfig, StrategyKind};
use rqa::geometry::{sample_interior, substream, Stream};
use rqa::network::MlpParams;
use rqa::problems::{PdeProblem, ProblemKind};
use rqa::trainer::{weighted_loss_and_gradient, IterationBatches, NoObserver, TrainConfig, Trainer};
use rqa::weighting::{
    binary_multipliers, binary_weights, empirical_quantile, lp_weights, rqa_adjust, uniform_weights, Strategy,
};

// Criterion 1
const MANUFACTURED_TOL: f64 = 1e-6;
const MANUFACTURED_POINTS: usize = 100;
const C1_SECONDS: f64 = 10.0;
// Criterion 2
const BUNDLE_TOL: f64 = 1e-4;
const BUNDLE_STEP: f64 = 1e-4;
const BUNDLE_POINTS: usize = 100;
const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_STEP: f64 = 1e-4;
const GRADIENT_PARAMS: usize = 20;
const C2_SECONDS: f64 = 30.0;
// Criterion 3
const VECTORS: usize = 1000;
const SUM_TOL: f64 = 1e-12;
const SCALE_TOL: f64 = 1e-12;
const BINARY_TOL: f64 = 1e-12;
const C3_SECONDS: f64 = 5.0;
// Criterion 4
const PINN_ITERATIONS: usize = 10;
const C4_SECONDS: f64 = 10.0;
// Criteria 5 and 6
const DESK_L2_TARGET: f64 = 0.1;
const C5_SECONDS: f64 = 600.0;
const C6_SECONDS: f64 = 1200.0;
const BASE_SEEDS: [u64; 3] = [0, 1, 2];
const EXTRA_SEEDS: [u64; 2] = [3, 4];
// Criterion 8
const EXTENDED_ENV: &str = "RQA_EXTENDED";
const TREND_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Line {
    id: u8,
    name: &'static str,
    verdict: Verdict,
    detail: String,
}

impl Line {
    fn new(id: u8, name: &'static str, ok: bool, detail: String) -> Self {
        let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        Line { id, name, verdict, detail }
    }

    fn print(&self) {
        let tag = match self.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        println!("{tag}  criterion {}  {}: {}", self.id, self.name, self.detail);
    }
}

fn desk_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_elliptic2d.cfg");
    load_config(&path).expect("desk config parses")
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rqa-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn criterion_1() -> Line {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut all = true;
    for kind in ProblemKind::ALL {
        for d in [2, 5] {
            let p = PdeProblem::new(kind, d).unwrap();
            let r = bench::self_check(&p, MANUFACTURED_POINTS, 1).unwrap();
            worst = worst.max(r.max_residual).max(r.max_residual_independent);
            all &= r.passed();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Line::new(
        1,
        "manufactured-solution oracle",
        all && worst < MANUFACTURED_TOL && secs < C1_SECONDS,
        format!(
            "max |N[u_exact] - f| = {worst:.2e} over 3 problems x d in {{2,5}} x {MANUFACTURED_POINTS} points (tol {MANUFACTURED_TOL:e}), {secs:.1} s"
        ),
    )
}

fn criterion_2() -> Line {
    let start = Instant::now();
    // Bundles of a random d=5 network.
    let net = MlpParams::init(11, 5, true, 100).unwrap();
    let pts = sample_interior(BUNDLE_POINTS, 5, Some(1.0), &mut substream(11, Stream::Check, 0)).unwrap();
    let mut bundle_worst: f64 = 0.0;
    for i in 0..pts.len() {
        let (x, t) = (pts.x(i), pts.t(i));
        let b = net.derivatives_at(x, t).unwrap();
        let fd = fd_bundle(|x, t| net_value(&net, x, t), x, t, BUNDLE_STEP);
        let mut errs = vec![
            rel_err(b.value, fd.value),
            rel_err(b.laplacian, fd.laplacian),
            rel_err(b.time_derivative, fd.time_derivative),
        ];
        errs.extend((0..5).map(|j| rel_err(b.spatial_gradient[j], fd.spatial_gradient[j])));
        bundle_worst = errs.into_iter().fold(bundle_worst, f64::max);
    }

    // Full weighted loss of the parabolic problem, all three roles.
    let cfg = TrainConfig {
        problem: ProblemKind::Parabolic,
        d: 5,
        n_interior: 10,
        n_boundary: 10,
        n_initial: 10,
        width: 100,
        seed: 12,
        ..TrainConfig::default()
    };
    let problem = cfg.pde().unwrap();
    let params = MlpParams::init(cfg.seed, 5, true, cfg.width).unwrap();
    let batches = IterationBatches::sample(&cfg, &problem, 1).unwrap();
    let weights: Vec<Vec<f64>> = batches
        .roles()
        .map(|b| {
            let r: Vec<f64> = pointwise_defects(&problem, &params, b).iter().map(|v| v.abs()).collect();
            cfg.strategy.compute(&r).unwrap().adjusted.weights
        })
        .collect();
    let wrefs: Vec<&[f64]> = weights.iter().map(Vec::as_slice).collect();
    let (lb, li) = (0.7, 1.3);
    let sources = problem.sources(&batches.interior).unwrap();
    let (_, grad) = weighted_loss_and_gradient(&problem, &params, &batches, &sources, &wrefs, lb, li).unwrap();
    let loss = pointwise_loss(&problem, &params, &batches, &weights, lb, li);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut grad_worst: f64 = 0.0;
    for _ in 0..GRADIENT_PARAMS {
        let i = rng.random_range(0..params.num_params());
        let fd = fd_param_richardson(&problem, &params, &batches, &weights, lb, li, i, GRADIENT_STEP);
        grad_worst = grad_worst.max(grad_rel_err(grad[i], fd, fd_noise(loss, GRADIENT_STEP)));
    }
    let secs = start.elapsed().as_secs_f64();
    Line::new(
        2,
        "derivative correctness",
        bundle_worst < BUNDLE_TOL && grad_worst < GRADIENT_TOL && secs < C2_SECONDS,
        format!(
            "bundle rel err {bundle_worst:.2e} at {BUNDLE_POINTS} points (h={BUNDLE_STEP:e}), loss-gradient rel err {grad_worst:.2e} at {GRADIENT_PARAMS} params (tol {GRADIENT_TOL:e}), {secs:.1} s"
        ),
    )
}

fn random_residuals(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(1..=200);
    // Log-uniform magnitudes give long-tailed weight vectors.
    (0..n).map(|_| 10f64.powf(rng.random_range(-6.0..2.0))).collect()
}

/// Ascending sort and direct ⌈ξN⌉ pick, with the level given as a fraction.
fn sorted_pick(values: &[f64], num: usize, den: usize) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = (num * s.len()).div_ceil(den).max(1);
    s[rank - 1]
}

fn criterion_3() -> Line {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures: Vec<String> = Vec::new();
    let mut note = |ok: bool, what: &str| {
        if !ok && !failures.iter().any(|f| f == what) {
            failures.push(what.to_string());
        }
    };
    let (w_s, w_l) = binary_multipliers(0.8, 4.0);
    note((w_s - 5.0 / 17.0).abs() < BINARY_TOL && (w_l - 20.0 / 17.0).abs() < BINARY_TOL, "binary 5/17, 20/17");
    let mut worst_scale: f64 = 0.0;
    for _ in 0..VECTORS {
        let r = random_residuals(&mut rng);
        let n = r.len();
        let p = rng.random_range(2.0..8.0);
        let q_cut = rng.random_range(0.5..0.99);
        let q_target = rng.random_range(0.5..=q_cut);
        let lp = lp_weights(&r, p).unwrap();
        let adj = rqa_adjust(&lp, q_cut, q_target).unwrap();
        let eta = rng.random_range(0.05..0.95);
        let ratio = rng.random_range(1.0..10.0);
        let bin = binary_weights(&r, eta, ratio).unwrap();
        for w in [&uniform_weights(n).unwrap().weights, &lp.weights, &adj.weights, &bin.weights] {
            note((w.iter().sum::<f64>() - 1.0).abs() <= SUM_TOL, "normalization");
            note(w.iter().all(|v| *v >= 0.0), "nonnegativity");
        }

        // Scale invariance: bitwise for powers of two, to rounding otherwise.
        let k = rng.random_range(-20..20);
        let scaled: Vec<f64> = r.iter().map(|v| v * 2f64.powi(k)).collect();
        note(lp_weights(&scaled, p).unwrap().weights == lp.weights, "lp scale invariance (2^k)");
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<f64> = r.iter().map(|v| v * c).collect();
        for (a, b) in lp_weights(&scaled, p).unwrap().weights.iter().zip(&lp.weights) {
            worst_scale = worst_scale.max((a - b).abs() / b.max(f64::MIN_POSITIVE));
        }

        // Monotone in the residual for p > 2.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| r[i].total_cmp(&r[j]));
        note(order.windows(2).all(|w| lp.weights[w[0]] <= lp.weights[w[1]]), "lp monotonicity");

        // Tail suppression and the clipping oracle.
        let thr = empirical_quantile(&lp.weights, q_cut).unwrap();
        let target = empirical_quantile(&lp.weights, q_target).unwrap();
        let clipped: Vec<f64> = lp.weights.iter().map(|&w| if w > thr { target } else { w }).collect();
        note(clipped.iter().all(|w| *w <= thr), "pre-normalization entries <= threshold");
        let total: f64 = clipped.iter().sum();
        note(
            adj.weights.iter().zip(&clipped).all(|(a, c)| (a - c / total).abs() <= 1e-15 * (c / total).max(1e-300)),
            "rqa matches clipping oracle",
        );
        let max_over_median = |w: &[f64]| {
            let mut s = w.to_vec();
            s.sort_by(f64::total_cmp);
            s[n - 1] / s[n.div_ceil(2) - 1]
        };
        note(
            max_over_median(&adj.weights) <= max_over_median(&lp.weights) * (1.0 + 1e-12),
            "max/median non-increasing",
        );

        // Quantiles against a sorting oracle.
        for (num, den) in [(1, 10), (1, 4), (1, 2), (3, 4), (9, 10), (99, 100)] {
            let level = num as f64 / den as f64;
            note(empirical_quantile(&r, level).unwrap() == sorted_pick(&r, num, den), "quantile oracle");
        }

        // Binary constraint.
        let (s, l) = binary_multipliers(eta, ratio);
        note((l * eta + s * (1.0 - eta) - 1.0).abs() <= BINARY_TOL, "binary constraint");
    }
    note(worst_scale <= SCALE_TOL, "lp scale invariance (general)");
    let secs = start.elapsed().as_secs_f64();
    let ok = failures.is_empty() && secs < C3_SECONDS;
    let detail = if failures.is_empty() {
        format!(
            "{VECTORS} vectors: sums, 2^k scale (bitwise), general scale (rel {worst_scale:.1e}), monotonicity, tail suppression (q_target >= 0.5), quantile oracle, binary w_S=5/17 w_L=20/17; {secs:.1} s"
        )
    } else {
        format!("violated: {}; {secs:.1} s", failures.join(", "))
    };
    Line::new(3, "weighting property suite", ok, detail)
}

fn criterion_4() -> Line {
    let start = Instant::now();
    let mut identical = true;
    for kind in ProblemKind::ALL {
        let cfg = TrainConfig {
            problem: kind,
            d: 3,
            strategy: Strategy::Uniform,
            iterations: PINN_ITERATIONS,
            n_interior: 100,
            n_boundary: 60,
            n_initial: 30,
            lambda_b: 0.5,
            lambda_i: 2.0,
            width: 20,
            n_test: 500,
            seed: 4,
            ..TrainConfig::default()
        };
        let reference = reference_pinn(&cfg);
        let mut trainer = Trainer::new(cfg).unwrap();
        let mut strategy = Strategy::Uniform;
        let losses: Vec<f64> = (0..PINN_ITERATIONS)
            .map(|_| trainer.step(&mut strategy, &mut NoObserver).unwrap())
            .collect();
        identical &= losses.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let secs = start.elapsed().as_secs_f64();
    Line::new(
        4,
        "reduction to PINN",
        identical && secs < C4_SECONDS,
        format!("uniform vs mean-square reference, 3 problems x {PINN_ITERATIONS} iterations, bitwise equal = {identical}, {secs:.1} s"),
    )
}

/// Final L2 errors of a strategy on the desk setup, one per seed.
fn desk_errors(kind: StrategyKind, seeds: &[u64], dir: &Path) -> Vec<f64> {
    let mut cfg = desk_config();
    cfg.grid.strategies = vec![kind];
    let out = run_sweep(&cfg, seeds, dir).expect("desk sweep runs");
    out.rows.iter().map(|r| r.final_l2).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn criteria_5_to_7() -> [Line; 3] {
    let start = Instant::now();
    let rqa_dir = scratch_dir("rqa");
    let mut rqa = desk_errors(StrategyKind::Rqa, &BASE_SEEDS, &rqa_dir);
    let (mean, _) = bench::mean_std(&rqa);
    let secs5 = start.elapsed().as_secs_f64();
    let c5 = Line::new(
        5,
        "desk-scale solve",
        mean <= DESK_L2_TARGET && secs5 <= C5_SECONDS,
        format!(
            "elliptic d=2 rqa(p=4, 0.9, 0.5), seeds {BASE_SEEDS:?}: final L2 [{}], mean {mean:.3e} (target <= {DESK_L2_TARGET}), {secs5:.0} s",
            fmt_list(&rqa)
        ),
    );

    let start6 = Instant::now();
    let lp_dir = scratch_dir("lp");
    let mut lp = desk_errors(StrategyKind::Lp, &BASE_SEEDS, &lp_dir);
    let pooled = |a: &[f64], b: &[f64]| {
        let (_, sa) = bench::mean_std(a);
        let (_, sb) = bench::mean_std(b);
        ((sa * sa + sb * sb) / 2.0).sqrt()
    };
    let gap = |a: &[f64], b: &[f64]| bench::mean_std(b).0 - bench::mean_std(a).0;
    let mut extended = false;
    if gap(&rqa, &lp).abs() <= pooled(&rqa, &lp) {
        extended = true;
        rqa.extend(desk_errors(StrategyKind::Rqa, &EXTRA_SEEDS, &scratch_dir("rqa-extra")));
        lp.extend(desk_errors(StrategyKind::Lp, &EXTRA_SEEDS, &scratch_dir("lp-extra")));
    }
    let (m_rqa, m_lp) = (bench::mean_std(&rqa).0, bench::mean_std(&lp).0);
    let secs6 = start6.elapsed().as_secs_f64() + secs5;
    let c6 = Line::new(
        6,
        "directional adaptivity (rqa <= lp)",
        m_rqa <= m_lp && secs6 <= C6_SECONDS,
        format!(
            "{} seeds{}: rqa mean {m_rqa:.3e} [{}] vs lp mean {m_lp:.3e} [{}], pooled std {:.2e}, {secs6:.0} s",
            rqa.len(),
            if extended { " (extended: gap within one pooled std at 3 seeds)" } else { "" },
            fmt_list(&rqa),
            fmt_list(&lp),
            pooled(&rqa, &lp),
        ),
    );

    // Seed 0 history from the sweep against a fresh single run.
    let cfg = desk_config();
    let first = std::fs::read(rqa_dir.join(bench::cell_label(&cfg.base.strategy)).join("seed0/history.csv")).unwrap();
    let single_dir = scratch_dir("single");
    let run = run_single(&cfg, &single_dir, None).unwrap();
    let second = std::fs::read(&run.history_path).unwrap();
    let c7 = Line::new(
        7,
        "determinism",
        first == second,
        format!("seed 0 history.csv from two invocations: {} bytes, identical = {}", first.len(), first == second),
    );
    for d in [rqa_dir, lp_dir, single_dir] {
        let _ = std::fs::remove_dir_all(d);
    }
    [c5, c6, c7]
}

fn criterion_8() -> Line {
    if std::env::var(EXTENDED_ENV).as_deref() != Ok("1") {
        return Line {
            id: 8,
            name: "table trend (extended)",
            verdict: Verdict::Skip,
            detail: format!("set {EXTENDED_ENV}=1 to run the 2 x 2 x 5-seed sweep"),
        };
    }
    let start = Instant::now();
    let mut cfg = desk_config();
    cfg.grid.strategies = vec![StrategyKind::Rqa];
    cfg.grid.p = vec![2.5, 6.0];
    cfg.grid.q_cut = vec![0.9];
    cfg.grid.q_target = vec![0.1, 0.9];
    let dir = scratch_dir("trend");
    let out = run_sweep(&cfg, &TREND_SEEDS, &dir).expect("trend sweep runs");
    let _ = std::fs::remove_dir_all(&dir);
    let mean_of = |p: f64, q: f64| {
        out.aggregate
            .iter()
            .find(|a| a.strategy == Strategy::Rqa { p, q_cut: 0.9, q_target: q })
            .map(|a| (a.mean_l2, a.std_l2))
            .unwrap()
    };
    let cells: Vec<String> = [(2.5, 0.1), (2.5, 0.9), (6.0, 0.1), (6.0, 0.9)]
        .iter()
        .map(|&(p, q)| {
            let (m, s) = mean_of(p, q);
            format!("p={p} q={q}: {m:.3e}±{s:.1e}")
        })
        .collect();
    let (hi, lo) = (mean_of(6.0, 0.9).0, mean_of(6.0, 0.1).0);
    Line::new(
        8,
        "table trend (extended)",
        hi <= lo,
        format!(
            "{}; p=6: q_target 0.9 mean {hi:.3e} vs 0.1 mean {lo:.3e}, {:.0} s",
            cells.join("; "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes us is honored.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }
    let mut lines = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4()];
    for l in &lines {
        l.print();
    }
    for l in criteria_5_to_7() {
        l.print();
        lines.push(l);
    }
    let c8 = criterion_8();
    c8.print();
    lines.push(c8);
    let failed: Vec<u8> = lines.iter().filter(|l| matches!(l.verdict, Verdict::Fail)).map(|l| l.id).collect();
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
