//! Subcommand implementations. Every file written here is a pure function
//! of the spec, the seeds and the strategy filter: no timestamps, fixed
//! iteration orders, and parallel cells collected back in input order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cssl_core::data::{format_float, gen_sigmoid_task, Truth};
use cssl_core::metrics::{fn_mse_to_truth, unit_grid};
use cssl_core::trainer::{self_train_method, train, RunRecord};
use cssl_core::{SelfTrainConfig, SelfTrainMethod, StrategyConfig, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::spec::{ExperimentSpec, NamedStrategy, TaskSpec, TrainSpec, SPEC_VERSION};

/// Reported metrics are averaged over this tail of the evaluation points.
pub const METRIC_WINDOW: &str = "EMA-model metrics averaged over the last 5% of evaluation points (at least one)";

/// Flags shared by the training subcommands.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: PathBuf,
    /// Overrides the spec's seed list.
    pub seeds: Option<Vec<u64>>,
    /// Worker threads; `None` lets rayon decide.
    pub jobs: Option<usize>,
    /// Keep only the cell(s) with this strategy name.
    pub strategy: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub final_error: f64,
    pub final_ece: f64,
    pub mean_mask_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub config: StrategyConfig,
    pub seeds: Vec<u64>,
    pub total_steps: usize,
    pub final_error: MeanStd,
    pub final_ece: MeanStd,
    pub mean_mask_rate: MeanStd,
    pub per_seed: Vec<SeedResult>,
    pub metric_window: String,
}

impl StrategySummary {
    fn new(named: &NamedStrategy, total_steps: usize, per_seed: Vec<SeedResult>) -> Self {
        let column = |f: fn(&SeedResult) -> f64| MeanStd::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        Self {
            strategy: named.name.clone(),
            config: named.strategy.clone(),
            seeds: per_seed.iter().map(|r| r.seed).collect(),
            total_steps,
            final_error: column(|r| r.final_error),
            final_ece: column(|r| r.final_ece),
            mean_mask_rate: column(|r| r.mean_mask_rate),
            per_seed,
            metric_window: METRIC_WINDOW.to_string(),
        }
    }
}

/// Enough to re-run one cell in isolation: build the task from `task` with
/// `data_seed`, then `train(config, task)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub strategy: String,
    pub seed: u64,
    pub data_seed: u64,
    pub record: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec_version: u32,
    pub command: String,
    pub task: TaskSpec,
    pub cells: Vec<ManifestCell>,
}

fn thread_pool(jobs: Option<usize>) -> CliResult<rayon::ThreadPool> {
    if jobs == Some(0) {
        return Err(CliError::Config("--jobs must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_record(path: &Path, record: &RunRecord) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    record.write_csv(BufWriter::new(file))?;
    Ok(())
}

fn cell_file(name: &str, seed: u64) -> String {
    format!("{name}__seed{seed}.csv")
}

struct Cell<'a> {
    named: &'a NamedStrategy,
    seed: u64,
}

/// Trains one cell and writes its record, also when training aborts.
fn run_cell(task: &TaskSpec, train_spec: &TrainSpec, cell: &Cell, path: &Path) -> CliResult<SeedResult> {
    let data = task.build(cell.seed)?;
    let cfg = train_spec.to_config(cell.named.strategy.clone(), cell.seed);
    match train(&cfg, &data) {
        Ok(out) => {
            write_record(path, &out.record)?;
            let missing = || CliError::Runtime(format!("{} seed {}: no evaluation points", cell.named.name, cell.seed));
            Ok(SeedResult {
                seed: cell.seed,
                final_error: out.record.final_error().ok_or_else(missing)?,
                final_ece: out.record.final_ece().ok_or_else(missing)?,
                mean_mask_rate: out.record.mean_mask_rate(),
            })
        }
        Err(failure) => {
            write_record(path, &failure.record)?;
            Err(CliError::Runtime(format!("{} seed {}: {failure}", cell.named.name, cell.seed)))
        }
    }
}

fn select<'a>(strategies: &'a [NamedStrategy], filter: Option<&str>) -> CliResult<Vec<&'a NamedStrategy>> {
    let chosen: Vec<_> = strategies.iter().filter(|s| filter.is_none_or(|f| s.name == f)).collect();
    if chosen.is_empty() {
        return Err(match filter {
            Some(f) => CliError::Config(format!("no strategy named {f:?}")),
            None => CliError::Config("comparison: at least one strategy is required".into()),
        });
    }
    Ok(chosen)
}

/// Trains all `(strategy, seed)` cells, writing `<dir>/<records>/<name>__seed<s>.csv`,
/// and returns per-strategy summaries plus the manifest cells.
fn run_grid(
    spec: &ExperimentSpec,
    train_spec: &TrainSpec,
    strategies: &[&NamedStrategy],
    seeds: &[u64],
    jobs: Option<usize>,
    dir: &Path,
    records: &str,
) -> CliResult<(Vec<StrategySummary>, Vec<ManifestCell>)> {
    let record_dir = dir.join(records);
    create_dir(&record_dir)?;
    let cells: Vec<Cell> = strategies.iter().flat_map(|named| seeds.iter().map(move |&seed| Cell { named, seed })).collect();
    let pool = thread_pool(jobs)?;
    let results: Vec<CliResult<SeedResult>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(&spec.task, train_spec, cell, &record_dir.join(cell_file(&cell.named.name, cell.seed))))
            .collect()
    });
    let results = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let summaries = strategies
        .iter()
        .enumerate()
        .map(|(i, named)| StrategySummary::new(named, train_spec.total_steps, results[i * seeds.len()..(i + 1) * seeds.len()].to_vec()))
        .collect();
    let manifest_cells = cells
        .iter()
        .map(|cell| ManifestCell {
            strategy: cell.named.name.clone(),
            seed: cell.seed,
            data_seed: spec.task.data_seed(cell.seed),
            record: format!("{records}/{}", cell_file(&cell.named.name, cell.seed)),
            config: train_spec.to_config(cell.named.strategy.clone(), cell.seed),
        })
        .collect();
    Ok((summaries, manifest_cells))
}

fn seeds_for(spec: &ExperimentSpec, opts: &Options) -> CliResult<Vec<u64>> {
    let seeds = opts.seeds.clone().unwrap_or_else(|| spec.seeds.clone());
    if seeds.is_empty() {
        return Err(CliError::Config("at least one seed is required".into()));
    }
    Ok(seeds)
}

pub fn cmd_validate(spec: &ExperimentSpec) -> CliResult<()> {
    spec.validate()
}

/// Writes `runs/*.csv`, `summaries/<strategy>.json` and `manifest.json`
/// under `opts.out`.
pub fn cmd_run(spec: &ExperimentSpec, opts: &Options) -> CliResult<Vec<StrategySummary>> {
    spec.validate()?;
    let seeds = seeds_for(spec, opts)?;
    let strategies = select(&spec.comparison, opts.strategy.as_deref())?;
    let (summaries, cells) = run_grid(spec, &spec.train, &strategies, &seeds, opts.jobs, &opts.out, "runs")?;
    let summary_dir = opts.out.join("summaries");
    create_dir(&summary_dir)?;
    for s in &summaries {
        write_json(&summary_dir.join(format!("{}.json", s.strategy)), s)?;
    }
    let manifest = Manifest { spec_version: SPEC_VERSION, command: "run".into(), task: spec.task.clone(), cells };
    write_json(&opts.out.join("manifest.json"), &manifest)?;
    Ok(summaries)
}

/// The fixed comparison set of the reduced-budget study.
pub fn efficiency_strategies() -> Vec<NamedStrategy> {
    let named = |name: &str, strategy| NamedStrategy { name: name.into(), strategy };
    vec![
        named("cssl", StrategyConfig::cssl()),
        named("lsmatch", StrategyConfig::lsmatch()),
        named("fixmatch-tau0", StrategyConfig::fixmatch(0.0)),
        named("fixmatch-tau0.8", StrategyConfig::fixmatch(0.8)),
        named("fixmatch-tau0.95", StrategyConfig::fixmatch(0.95)),
    ]
}

/// Steps actually trained: an eighth of the configured budget.
pub fn efficiency_budget(total_steps: usize) -> usize {
    (total_steps / 8).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub budget_steps: usize,
    pub rows: Vec<StrategySummary>,
}

impl EfficiencyReport {
    pub fn row(&self, name: &str) -> Option<&StrategySummary> {
        self.rows.iter().find(|r| r.strategy == name)
    }
}

pub const EFFICIENCY_TABLE_HEADER: [&str; 10] =
    ["strategy", "kind", "tau", "budget_steps", "seeds", "mean_error", "std_error", "mean_ece", "std_ece", "mask_rate"];

/// Runs the comparison set for `total_steps / 8` steps; writes learning
/// curves to `efficiency/curves/`, `efficiency/final_table.csv` and
/// `efficiency/manifest.json` under `opts.out`.
pub fn cmd_efficiency(spec: &ExperimentSpec, opts: &Options) -> CliResult<EfficiencyReport> {
    spec.validate()?;
    let seeds = seeds_for(spec, opts)?;
    let all = efficiency_strategies();
    let strategies = select(&all, opts.strategy.as_deref())?;
    let budget = efficiency_budget(spec.train.total_steps);
    let train_spec = TrainSpec { total_steps: budget, ..spec.train.clone() };
    let dir = opts.out.join("efficiency");
    let (rows, cells) = run_grid(spec, &train_spec, &strategies, &seeds, opts.jobs, &dir, "curves")?;

    let file = File::create(dir.join("final_table.csv"))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(file));
    w.write_record(EFFICIENCY_TABLE_HEADER)?;
    for r in &rows {
        let thresholded = r.config.kind.is_thresholded();
        let opt = |on: bool, v: f64| if on { format_float(v) } else { String::new() };
        w.write_record([
            r.strategy.clone(),
            r.config.kind.name().to_string(),
            opt(thresholded, r.config.tau),
            budget.to_string(),
            r.seeds.len().to_string(),
            format_float(r.final_error.mean),
            format_float(r.final_error.std),
            format_float(r.final_ece.mean),
            format_float(r.final_ece.std),
            opt(thresholded, r.mean_mask_rate.mean),
        ])?;
    }
    w.flush()?;
    let manifest = Manifest { spec_version: SPEC_VERSION, command: "efficiency".into(), task: spec.task.clone(), cells };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(EfficiencyReport { budget_steps: budget, rows })
}

/// The 1-D self-training study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub steepness: f64,
    pub midpoint: f64,
    /// All model seeds share this data set.
    pub data_seed: u64,
    pub grid_points: usize,
    /// `seed` is replaced by each run seed.
    pub self_train: SelfTrainConfig,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_labeled: 25,
            n_unlabeled: 500,
            steepness: 10.0,
            midpoint: 0.5,
            data_seed: 0,
            grid_points: 1001,
            self_train: SelfTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMse {
    pub seed: u64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: SelfTrainMethod,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub per_seed: Vec<SeedMse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticReport {
    pub spec: SyntheticSpec,
    pub seeds: Vec<u64>,
    /// Ordered by mean MSE, best first.
    pub methods: Vec<MethodSummary>,
}

impl SyntheticReport {
    pub fn mean_mse(&self, method: SelfTrainMethod) -> Option<f64> {
        self.methods.iter().find(|m| m.method == method).map(|m| m.mean_mse)
    }
}

fn write_curve(path: &Path, header: [&str; 2], xs: &[f64], ys: &[f64]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(file));
    w.write_record(header)?;
    for (x, y) in xs.iter().zip(ys) {
        w.write_record([format_float(*x), format_float(*y)])?;
    }
    w.flush()?;
    Ok(())
}

/// Self-trains hard, soft and credal models per seed; writes
/// `synthetic/curves/<method>__seed<s>.csv`, `synthetic/truth.csv` and
/// `synthetic/summary.json` under `out`.
pub fn cmd_synthetic(spec: &SyntheticSpec, seeds: &[u64], out: &Path, jobs: Option<usize>) -> CliResult<SyntheticReport> {
    if seeds.is_empty() {
        return Err(CliError::Config("at least one seed is required".into()));
    }
    if spec.grid_points < 2 {
        return Err(CliError::Config("grid_points must be >= 2".into()));
    }
    let task = gen_sigmoid_task(spec.n_labeled, spec.n_unlabeled, 0, spec.steepness, spec.midpoint, spec.data_seed)?;
    let grid = unit_grid(spec.grid_points);
    let dir = out.join("synthetic");
    let curve_dir = dir.join("curves");
    create_dir(&curve_dir)?;
    let truth: Vec<f64> = grid.iter().map(|&x| Truth::positive_prob(spec.steepness, spec.midpoint, x)).collect();
    write_curve(&dir.join("truth.csv"), ["x", "p_true"], &grid, &truth)?;

    let cells: Vec<(SelfTrainMethod, u64)> =
        SelfTrainMethod::ALL.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let pool = thread_pool(jobs)?;
    let results: Vec<CliResult<f64>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(method, seed)| {
                let cfg = SelfTrainConfig { seed, ..spec.self_train.clone() };
                let model = self_train_method(&cfg, &task, method)?;
                let curve = grid.iter().map(|&x| model.predict(&[x]).map(|p| p.probs()[1])).collect::<cssl_core::Result<Vec<_>>>()?;
                write_curve(&curve_dir.join(cell_file(method.name(), seed)), ["x", "p_hat"], &grid, &curve)?;
                Ok(fn_mse_to_truth(&model, &task.truth, &grid)?)
            })
            .collect()
    });
    let mses = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let mut methods: Vec<MethodSummary> = SelfTrainMethod::ALL
        .iter()
        .enumerate()
        .map(|(i, &method)| {
            let chunk = &mses[i * seeds.len()..(i + 1) * seeds.len()];
            let stats = MeanStd::of(chunk);
            MethodSummary {
                method,
                mean_mse: stats.mean,
                std_mse: stats.std,
                per_seed: seeds.iter().zip(chunk).map(|(&seed, &mse)| SeedMse { seed, mse }).collect(),
            }
        })
        .collect();
    methods.sort_by(|a, b| a.mean_mse.total_cmp(&b.mean_mse).then(a.method.name().cmp(b.method.name())));
    let report = SyntheticReport { spec: spec.clone(), seeds: seeds.to_vec(), methods };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

/// Writes a one-line-per-row human summary.
pub fn print_summaries<W: Write>(mut w: W, rows: &[StrategySummary]) -> std::io::Result<()> {
    for r in rows {
        writeln!(
            w,
            "{:<20} error {:.4} ± {:.4}  ece {:.4} ± {:.4}  mask {:.3}",
            r.strategy, r.final_error.mean, r.final_error.std, r.final_ece.mean, r.final_ece.std, r.mean_mask_rate.mean
        )?;
    }
    Ok(())
}
