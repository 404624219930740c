//! Experiment harness: flat `key=value` configs, single runs, multi-seed
//! sweeps and their CSV outputs.
//!
//! Config files hold one `key=value` per line; `#` starts a comment. The grid
//! keys `strategy`, `p`, `q_cut`, `q_target` and `seeds` accept comma lists.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::ad::{laplacian_by_coordinates, ScalarField};
use crate::error::{Result, RqaError};
use crate::geometry::{sample_interior, substream, PointBatch, Role, Stream};
use crate::network::InitScheme;
use crate::problems::{PdeProblem, ProblemKind, SourceCrossCheck};
use crate::trainer::{
    HistoryRow, IterationBatches, Optimizer, RunRecord, Timing, TrainConfig, TrainObserver, Trainer,
};
use crate::weighting::{Strategy, WeightComputation};

pub const HISTORY_HEADER: [&str; 5] = ["iter", "loss", "l2_error", "max_error", "wall_ms"];
pub const SUMMARY_HEADER: [&str; 7] = [
    "strategy", "p", "q_cut", "q_target", "seed", "final_l2", "final_max",
];
pub const AGG_HEADER: [&str; 9] = [
    "strategy", "p", "q_cut", "q_target", "runs", "mean_l2", "std_l2", "mean_max", "std_max",
];
pub const CHECKSUM_HEADER: [&str; 4] = ["iter", "role", "points", "checksum"];

/// Environment variable capping sweep worker threads.
pub const THREADS_ENV: &str = "RQA_THREADS";

/// Exit codes of the command-line front end.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DIVERGENCE: i32 = 3;
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &RqaError) -> i32 {
    match e {
        RqaError::Config { .. } | RqaError::InvalidInput(_) => exit::CONFIG,
        RqaError::Divergence { .. } => exit::DIVERGENCE,
        _ => exit::FAILURE,
    }
}

/// Numbers in every CSV use this many digits after the leading one.
fn num(v: f64) -> String {
    format!("{v:.12e}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyKind {
    Uniform,
    Lp,
    Binary,
    Rqa,
}

impl std::str::FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(StrategyKind::Uniform),
            "lp" => Ok(StrategyKind::Lp),
            "binary" => Ok(StrategyKind::Binary),
            "rqa" => Ok(StrategyKind::Rqa),
            _ => Err(format!(
                "unknown strategy `{s}` (expected uniform, lp, binary or rqa)"
            )),
        }
    }
}

/// Strategy grid of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub strategies: Vec<StrategyKind>,
    pub p: Vec<f64>,
    pub q_cut: Vec<f64>,
    pub q_target: Vec<f64>,
    pub eta: f64,
    pub ratio: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            strategies: vec![StrategyKind::Rqa],
            p: vec![3.0],
            q_cut: vec![0.9],
            q_target: vec![0.5],
            eta: 0.8,
            ratio: 4.0,
        }
    }
}

impl Grid {
    /// Distinct strategies of the grid in declaration order. Parameters a
    /// strategy does not use do not multiply its cells.
    pub fn cells(&self) -> Vec<Strategy> {
        let mut out: Vec<Strategy> = Vec::new();
        let mut push = |s: Strategy| {
            if !out.contains(&s) {
                out.push(s);
            }
        };
        for kind in &self.strategies {
            match kind {
                StrategyKind::Uniform => push(Strategy::Uniform),
                StrategyKind::Binary => push(Strategy::Binary {
                    eta: self.eta,
                    ratio: self.ratio,
                }),
                StrategyKind::Lp => self.p.iter().for_each(|&p| push(Strategy::Lp { p })),
                StrategyKind::Rqa => {
                    for &p in &self.p {
                        for &q_cut in &self.q_cut {
                            for &q_target in &self.q_target {
                                push(Strategy::Rqa { p, q_cut, q_target });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Training settings shared by every cell; its strategy and seed are
    /// replaced per cell and per seed.
    pub base: TrainConfig,
    pub grid: Grid,
    pub seeds: Vec<u64>,
    /// Iterations whose interior weights are dumped.
    pub dump_weights: Vec<usize>,
    pub dump_checksums: bool,
}

impl ExperimentConfig {
    pub fn cells(&self) -> Vec<Strategy> {
        self.grid.cells()
    }

    /// The training config of the only cell; errors on a multi-cell grid.
    pub fn single(&self) -> Result<TrainConfig> {
        match self.cells().as_slice() {
            [s] => Ok(self.cell_config(*s, self.base.seed)),
            cells => Err(RqaError::Config {
                line: 0,
                key: "strategy".into(),
                message: format!("a single run needs exactly one strategy cell, the grid has {}", cells.len()),
            }),
        }
    }

    pub fn cell_config(&self, strategy: Strategy, seed: u64) -> TrainConfig {
        TrainConfig {
            strategy,
            seed,
            ..self.base.clone()
        }
    }
}

const KEYS: &[&str] = &[
    "problem", "d", "strategy", "p", "q_cut", "q_target", "eta", "ratio", "iterations",
    "n_interior", "n_boundary", "n_initial", "lambda_b", "lambda_i", "width", "init",
    "optimizer", "beta1", "beta2", "epsilon", "seed", "seeds", "eval_every", "n_test",
    "timing", "dump_weights", "dump_checksums",
];

struct Entry {
    line: usize,
    value: String,
}

fn config_err(line: usize, key: &str, message: impl Into<String>) -> RqaError {
    RqaError::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_scalar<T: std::str::FromStr>(e: &Entry, key: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    e.value
        .parse::<T>()
        .map_err(|err| config_err(e.line, key, format!("cannot parse `{}`: {err}", e.value)))
}

fn parse_list<T: std::str::FromStr>(e: &Entry, key: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    e.value
        .split(',')
        .map(|item| {
            let item = item.trim();
            if item.is_empty() {
                return Err(config_err(e.line, key, "empty list entry"));
            }
            item.parse::<T>()
                .map_err(|err| config_err(e.line, key, format!("cannot parse `{item}`: {err}")))
        })
        .collect()
}

fn parse_bool(e: &Entry, key: &str) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(config_err(e.line, key, format!("expected true or false, got `{v}`"))),
    }
}

/// Parses config text. Missing keys keep their [`TrainConfig`] and [`Grid`]
/// defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut entries: HashMap<String, Entry> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(config_err(line, content, "expected `key=value`"));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(config_err(line, key, "unknown key"));
        }
        if value.is_empty() {
            return Err(config_err(line, key, "missing value"));
        }
        if let Some(prev) = entries.get(key) {
            return Err(config_err(line, key, format!("duplicate key, first set at line {}", prev.line)));
        }
        entries.insert(
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
            },
        );
    }

    let mut base = TrainConfig::default();
    let mut grid = Grid::default();
    let mut seeds = None;
    let mut dump_weights = Vec::new();
    let mut dump_checksums = false;
    let (mut beta1, mut beta2, mut epsilon) = match base.optimizer {
        Optimizer::Adam { beta1, beta2, epsilon } => (beta1, beta2, epsilon),
        Optimizer::Sgd => unreachable!(),
    };
    let mut optimizer = "adam".to_string();
    let line_of = |k: &str| entries.get(k).map_or(0, |e| e.line);

    let mut ordered: Vec<(&String, &Entry)> = entries.iter().collect();
    ordered.sort_by_key(|(_, e)| e.line);
    for (key, e) in ordered {
        let k = key.as_str();
        match k {
            "problem" => {
                base.problem = e
                    .value
                    .parse::<ProblemKind>()
                    .map_err(|err| config_err(e.line, k, err.to_string()))?
            }
            "d" => base.d = parse_scalar(e, k)?,
            "strategy" => {
                grid.strategies = parse_list::<StrategyKind>(e, k)?;
            }
            "p" => grid.p = parse_list(e, k)?,
            "q_cut" => grid.q_cut = parse_list(e, k)?,
            "q_target" => grid.q_target = parse_list(e, k)?,
            "eta" => grid.eta = parse_scalar(e, k)?,
            "ratio" => grid.ratio = parse_scalar(e, k)?,
            "iterations" => base.iterations = parse_scalar(e, k)?,
            "n_interior" => base.n_interior = parse_scalar(e, k)?,
            "n_boundary" => base.n_boundary = parse_scalar(e, k)?,
            "n_initial" => base.n_initial = parse_scalar(e, k)?,
            "lambda_b" => base.lambda_b = parse_scalar(e, k)?,
            "lambda_i" => base.lambda_i = parse_scalar(e, k)?,
            "width" => base.width = parse_scalar(e, k)?,
            "init" => {
                base.init = e
                    .value
                    .parse::<InitScheme>()
                    .map_err(|err| config_err(e.line, k, err.to_string()))?
            }
            "optimizer" => optimizer = e.value.clone(),
            "beta1" => beta1 = parse_scalar(e, k)?,
            "beta2" => beta2 = parse_scalar(e, k)?,
            "epsilon" => epsilon = parse_scalar(e, k)?,
            "seed" => base.seed = parse_scalar(e, k)?,
            "seeds" => seeds = Some(parse_list(e, k)?),
            "eval_every" => base.eval_every = parse_scalar(e, k)?,
            "n_test" => base.n_test = parse_scalar(e, k)?,
            "timing" => {
                base.timing = match e.value.as_str() {
                    "wall" => Timing::Wall,
                    "off" => Timing::Off,
                    v => return Err(config_err(e.line, k, format!("expected wall or off, got `{v}`"))),
                }
            }
            "dump_weights" => dump_weights = parse_list(e, k)?,
            "dump_checksums" => dump_checksums = parse_bool(e, k)?,
            _ => unreachable!("key list and match arms agree"),
        }
    }

    base.optimizer = match optimizer.as_str() {
        "adam" => Optimizer::Adam { beta1, beta2, epsilon },
        "sgd" => Optimizer::Sgd,
        v => return Err(config_err(line_of("optimizer"), "optimizer", format!("expected adam or sgd, got `{v}`"))),
    };

    // Range checks, reported against the key that carries the value.
    let check = |ok: bool, key: &str, msg: &str| -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(config_err(line_of(key), key, msg))
        }
    };
    check(base.d >= 1, "d", "must be >= 1")?;
    check(base.iterations >= 1, "iterations", "must be >= 1")?;
    check(base.n_interior >= 1, "n_interior", "must be >= 1")?;
    check(base.n_boundary >= 1, "n_boundary", "must be >= 1")?;
    check(base.n_initial >= 1, "n_initial", "must be >= 1")?;
    check(base.lambda_b >= 0.0, "lambda_b", "must be >= 0")?;
    check(base.lambda_i >= 0.0, "lambda_i", "must be >= 0")?;
    check(base.width >= 1, "width", "must be >= 1")?;
    check(base.eval_every >= 1, "eval_every", "must be >= 1")?;
    check(base.n_test >= 1, "n_test", "must be >= 1")?;
    check(grid.p.iter().all(|p| p.is_finite() && *p >= 2.0), "p", "every p must be >= 2")?;
    let unit = |v: &f64| *v > 0.0 && *v < 1.0;
    check(grid.q_cut.iter().all(unit), "q_cut", "quantile levels must lie in (0, 1)")?;
    check(grid.q_target.iter().all(unit), "q_target", "quantile levels must lie in (0, 1)")?;
    check(unit(&grid.eta), "eta", "must lie in (0, 1)")?;
    check(grid.ratio.is_finite() && grid.ratio >= 1.0, "ratio", "must be >= 1")?;
    if let Some(s) = &seeds {
        check(!Vec::<u64>::is_empty(s), "seeds", "needs at least one seed")?;
    }
    for cell in grid.cells() {
        if let Strategy::Rqa { q_cut, q_target, .. } = cell {
            check(
                q_target <= q_cut,
                "q_target",
                &format!("q_target {q_target} exceeds q_cut {q_cut}"),
            )?;
        }
    }
    base.strategy = grid.cells()[0];
    base.validate()
        .map_err(|err| config_err(0, "config", err.to_string()))?;

    Ok(ExperimentConfig {
        seeds: seeds.unwrap_or_else(|| vec![base.seed]),
        base,
        grid,
        dump_weights,
        dump_checksums,
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text)
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| RqaError::Io(e.error))?;
    Ok(())
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| RqaError::invalid(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(err)?;
    }
    w.into_inner().map_err(|e| RqaError::invalid(format!("csv: {e}")))
}

pub fn history_csv(rows: &[HistoryRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &HISTORY_HEADER,
        rows.iter().map(|r| {
            vec![r.iter.to_string(), num(r.loss), num(r.l2_error), num(r.max_error), num(r.wall_ms)]
        }),
    )
}

/// Parses a history CSV written by [`history_csv`].
pub fn parse_history(bytes: &[u8]) -> Result<Vec<HistoryRow>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let bad = |m: String| RqaError::invalid(format!("history csv: {m}"));
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(HISTORY_HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let f = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| bad(e.to_string()))
            };
            Ok(HistoryRow {
                iter: rec[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                loss: f(1)?,
                l2_error: f(2)?,
                max_error: f(3)?,
                wall_ms: f(4)?,
            })
        })
        .collect()
}

/// Interior points of one iteration with their residuals and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightDump {
    pub iteration: usize,
    pub batch: PointBatch,
    pub residuals: Vec<f64>,
    pub weights: WeightComputation,
}

impl WeightDump {
    pub fn file_name(&self) -> String {
        format!("weights_iter{}.csv", self.iteration)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["index".to_string()];
        h.extend((0..self.batch.d).map(|j| format!("x{j}")));
        if self.batch.time_dependent {
            h.push("t".into());
        }
        h.extend(["residual", "weight_raw", "weight_adjusted"].map(String::from));
        h
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let header = self.header();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        csv_bytes(
            &header,
            (0..self.batch.len()).map(|i| {
                let mut row = vec![i.to_string()];
                row.extend(self.batch.x(i).iter().map(|v| num(*v)));
                if self.batch.time_dependent {
                    row.push(num(self.batch.t(i)));
                }
                row.push(num(self.residuals[i]));
                row.push(num(self.weights.raw[i]));
                row.push(num(self.weights.adjusted.weights[i]));
                row
            }),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchChecksum {
    pub iteration: usize,
    pub role: Role,
    pub points: usize,
    pub checksum: u64,
}

pub fn checksum_csv(rows: &[BatchChecksum]) -> Result<Vec<u8>> {
    csv_bytes(
        &CHECKSUM_HEADER,
        rows.iter().map(|c| {
            vec![
                c.iteration.to_string(),
                c.role.to_string(),
                c.points.to_string(),
                format!("{:016x}", c.checksum),
            ]
        }),
    )
}

/// Collects weight dumps and batch checksums during a run.
#[derive(Debug, Default)]
pub struct Recorder {
    pub dump_iterations: Vec<usize>,
    pub record_checksums: bool,
    pub dumps: Vec<WeightDump>,
    pub checksums: Vec<BatchChecksum>,
}

impl TrainObserver for Recorder {
    fn on_batches(&mut self, iteration: usize, batches: &IterationBatches) {
        if self.record_checksums {
            for b in batches.roles() {
                self.checksums.push(BatchChecksum {
                    iteration,
                    role: b.role,
                    points: b.len(),
                    checksum: b.checksum(),
                });
            }
        }
    }

    fn on_weights(
        &mut self,
        iteration: usize,
        batch: &PointBatch,
        residuals: &[f64],
        weights: &WeightComputation,
    ) {
        if batch.role == Role::Interior && self.dump_iterations.contains(&iteration) {
            self.dumps.push(WeightDump {
                iteration,
                batch: batch.clone(),
                residuals: residuals.to_vec(),
                weights: weights.clone(),
            });
        }
    }
}

/// Outcome of [`run_single`].
#[derive(Debug)]
pub struct SingleRun {
    pub record: RunRecord,
    pub history_path: PathBuf,
    pub weight_paths: Vec<PathBuf>,
    pub checksum_path: Option<PathBuf>,
}

fn train_recorded(config: TrainConfig, recorder: &mut Recorder) -> Result<RunRecord> {
    let mut strategy = config.strategy;
    let (_, record) = Trainer::new(config)?.run(&mut strategy, recorder)?;
    Ok(record)
}

fn write_run_outputs(
    out_dir: &Path,
    record: &RunRecord,
    recorder: &Recorder,
) -> Result<(PathBuf, Vec<PathBuf>, Option<PathBuf>)> {
    let history_path = out_dir.join("history.csv");
    write_atomic(&history_path, &history_csv(&record.rows)?)?;
    let mut weight_paths = Vec::new();
    for dump in &recorder.dumps {
        let path = out_dir.join(dump.file_name());
        write_atomic(&path, &dump.to_csv()?)?;
        weight_paths.push(path);
    }
    let checksum_path = if recorder.record_checksums {
        let path = out_dir.join("checksums.csv");
        write_atomic(&path, &checksum_csv(&recorder.checksums)?)?;
        Some(path)
    } else {
        None
    };
    Ok((history_path, weight_paths, checksum_path))
}

/// Trains the config's single cell and writes `history.csv`, any requested
/// `weights_iter<k>.csv` and, if enabled, `checksums.csv` into `out_dir`.
/// `dump_weights` overrides the config's list when given.
pub fn run_single(
    config: &ExperimentConfig,
    out_dir: &Path,
    dump_weights: Option<&[usize]>,
) -> Result<SingleRun> {
    let train_config = config.single()?;
    let dump_iterations = dump_weights.unwrap_or(&config.dump_weights).to_vec();
    if let Some(k) = dump_iterations.iter().find(|k| **k == 0 || **k > train_config.iterations) {
        return Err(config_err(0, "dump_weights", format!("iteration {k} outside 1..={}", train_config.iterations)));
    }
    let mut recorder = Recorder {
        dump_iterations,
        record_checksums: config.dump_checksums,
        ..Recorder::default()
    };
    let record = train_recorded(train_config, &mut recorder)?;
    let (history_path, weight_paths, checksum_path) = write_run_outputs(out_dir, &record, &recorder)?;
    Ok(SingleRun {
        record,
        history_path,
        weight_paths,
        checksum_path,
    })
}

/// Directory name of a sweep cell, unique per strategy.
pub fn cell_label(s: &Strategy) -> String {
    match *s {
        Strategy::Uniform => "uniform".into(),
        Strategy::Lp { p } => format!("lp_p{p}"),
        Strategy::Binary { eta, ratio } => format!("binary_eta{eta}_ratio{ratio}"),
        Strategy::Rqa { p, q_cut, q_target } => format!("rqa_p{p}_qcut{q_cut}_qtarget{q_target}"),
    }
}

/// `(p, q_cut, q_target)` as written to summary files; empty when unused.
fn strategy_columns(s: &Strategy) -> [String; 3] {
    match *s {
        Strategy::Uniform | Strategy::Binary { .. } => Default::default(),
        Strategy::Lp { p } => [p.to_string(), String::new(), String::new()],
        Strategy::Rqa { p, q_cut, q_target } => [p.to_string(), q_cut.to_string(), q_target.to_string()],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub final_l2: f64,
    pub final_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub strategy: Strategy,
    pub runs: usize,
    pub mean_l2: f64,
    pub std_l2: f64,
    pub mean_max: f64,
    pub std_max: f64,
}

/// Mean and sample standard deviation (`n − 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Groups rows by strategy, keeping first-appearance order.
pub fn aggregate(rows: &[SweepRow]) -> Vec<AggregateRow> {
    let mut cells: Vec<Strategy> = Vec::new();
    for r in rows {
        if !cells.contains(&r.strategy) {
            cells.push(r.strategy);
        }
    }
    cells
        .into_iter()
        .map(|s| {
            let l2: Vec<f64> = rows.iter().filter(|r| r.strategy == s).map(|r| r.final_l2).collect();
            let mx: Vec<f64> = rows.iter().filter(|r| r.strategy == s).map(|r| r.final_max).collect();
            let (mean_l2, std_l2) = mean_std(&l2);
            let (mean_max, std_max) = mean_std(&mx);
            AggregateRow {
                strategy: s,
                runs: l2.len(),
                mean_l2,
                std_l2,
                mean_max,
                std_max,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &SUMMARY_HEADER,
        rows.iter().map(|r| {
            let mut row = vec![r.strategy.name().to_string()];
            row.extend(strategy_columns(&r.strategy));
            row.extend([r.seed.to_string(), num(r.final_l2), num(r.final_max)]);
            row
        }),
    )
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &AGG_HEADER,
        rows.iter().map(|r| {
            let mut row = vec![r.strategy.name().to_string()];
            row.extend(strategy_columns(&r.strategy));
            row.extend([
                r.runs.to_string(),
                num(r.mean_l2),
                num(r.std_l2),
                num(r.mean_max),
                num(r.std_max),
            ]);
            row
        }),
    )
}

/// Worker count: `RQA_THREADS` if set and positive, else the available
/// parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub aggregate: Vec<AggregateRow>,
    pub summary_path: PathBuf,
    pub aggregate_path: PathBuf,
}

/// Runs every `(cell, seed)` pair. Each pair writes its history (and
/// checksums, if enabled) under `out_dir/<cell>/seed<k>/`; the summaries go to
/// `out_dir`. Runs sharing a seed share their training batches and test set.
pub fn run_sweep(config: &ExperimentConfig, seeds: &[u64], out_dir: &Path) -> Result<SweepOutcome> {
    if seeds.is_empty() {
        return Err(config_err(0, "seeds", "needs at least one seed"));
    }
    let jobs: Vec<(Strategy, u64)> = config
        .cells()
        .into_iter()
        .flat_map(|s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| RqaError::invalid(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|&(strategy, seed)| {
                let mut recorder = Recorder {
                    record_checksums: config.dump_checksums,
                    ..Recorder::default()
                };
                let record = train_recorded(config.cell_config(strategy, seed), &mut recorder)?;
                let dir = out_dir.join(cell_label(&strategy)).join(format!("seed{seed}"));
                write_run_outputs(&dir, &record, &recorder)?;
                Ok(SweepRow {
                    strategy,
                    seed,
                    final_l2: record.summary.final_l2,
                    final_max: record.summary.final_max,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let aggregate = aggregate(&rows);
    let summary_path = out_dir.join("summary.csv");
    let aggregate_path = out_dir.join("summary_agg.csv");
    write_atomic(&summary_path, &summary_csv(&rows)?)?;
    write_atomic(&aggregate_path, &aggregate_csv(&aggregate)?)?;
    Ok(SweepOutcome {
        rows,
        aggregate,
        summary_path,
        aggregate_path,
    })
}

/// Manufactured-solution self-test of one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub problem: ProblemKind,
    pub d: usize,
    pub points: usize,
    /// `max |N[u_exact] − f|` with both sides from the jet engine.
    pub max_residual: f64,
    /// Same, with `Δu_exact` from coordinate-wise hyper-dual passes.
    pub max_residual_independent: f64,
    pub cross_check: SourceCrossCheck,
}

pub const CHECK_TOLERANCE: f64 = 1e-6;

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_residual < CHECK_TOLERANCE && self.max_residual_independent < CHECK_TOLERANCE
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} d={}: max |N[u] - f| over {} points = {:.3e} (jet), {:.3e} (hyper-dual) -> {}",
            self.problem,
            self.d,
            self.points,
            self.max_residual,
            self.max_residual_independent,
            if self.passed() { "ok" } else { "FAILED" }
        )?;
        write!(f, "{}", self.cross_check)
    }
}

/// Evaluates the manufactured-solution residual at `n` interior points drawn
/// from the check stream of `seed`.
pub fn self_check(problem: &PdeProblem, n: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = substream(seed, Stream::Check, 0);
    let batch = sample_interior(n, problem.d, problem.horizon(), &mut rng)?;
    let jet = problem.interior_residual(&problem.exact_field(), &batch)?;
    let exact = problem.exact_field();
    let sources = problem.sources(&batch)?;
    let mut independent: f64 = 0.0;
    for i in 0..batch.len() {
        let (x, t) = (batch.x(i), batch.t(i));
        let mut bundle = exact.derivatives_at(x, t)?;
        bundle.laplacian = laplacian_by_coordinates(&problem.exact_solution(), x, t);
        independent = independent.max((problem.operator(&bundle, x) - sources[i]).abs());
    }
    let cross_check = problem.cross_check(n, &mut substream(seed, Stream::Check, 1))?;
    Ok(CheckReport {
        problem: problem.kind,
        d: problem.d,
        points: n,
        max_residual: jet.into_iter().fold(0.0, f64::max),
        max_residual_independent: independent,
        cross_check,
    })
}
