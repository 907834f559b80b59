//! Replication harness: dataset instancing, the run schedule, per-run records,
//! aggregation into median and rank tables, and plot-data emission.
//!
//! Every run is independent and internally deterministic, so the schedule can be
//! executed on any number of workers and produces the same records.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_csv, make_benchmark, split, Benchmark, Dataset, Table, TargetColumn};
use crate::efs::{efs_run, EfsConfig};
use crate::error::{Error, Result};
use crate::expr::{count_nodes, ExprTree, FunctionSet, GlmModel, Model};
use crate::ffx::{ffx_run, FfxConfig};
use crate::linreg::{ols_fit, DesignMatrix};
use crate::mggp::{mggp_run, MggpConfig};
use crate::stats::{build_rank_table, lower_median, quantile_midpoint, rmse, RankTable};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "GLMSR_WORKERS";

/// Family-wise significance level before the Bonferroni correction.
pub const BASE_ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gptips,
    Mgptips,
    Efs,
    Ffx,
    Lr,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::Gptips, Algorithm::Mgptips, Algorithm::Efs, Algorithm::Ffx, Algorithm::Lr];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Gptips => "gptips",
            Algorithm::Mgptips => "mgptips",
            Algorithm::Efs => "efs",
            Algorithm::Ffx => "ffx",
            Algorithm::Lr => "lr",
        }
    }

    pub fn from_id(id: &str) -> Result<Algorithm> {
        let lower = id.to_ascii_lowercase();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == lower)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{id}`")))
    }

    /// Symbolic regression methods; only these enter the complexity comparison.
    pub fn is_symbolic(self) -> bool {
        self != Algorithm::Lr
    }

    /// Algorithms whose result does not depend on a seed.
    pub fn is_deterministic(self) -> bool {
        matches!(self, Algorithm::Ffx | Algorithm::Lr)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Target column of a CSV source: an index or a header name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Index(usize),
    Name(String),
}

fn default_header() -> bool {
    true
}

fn default_fraction() -> f64 {
    0.7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub id: String,
    pub path: PathBuf,
    /// Defaults to the last column.
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default = "default_header")]
    pub header: bool,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
}

impl CsvSource {
    fn target_column(&self) -> TargetColumn {
        match &self.target {
            None => TargetColumn::Last,
            Some(TargetSpec::Index(i)) => TargetColumn::Index(*i),
            Some(TargetSpec::Name(n)) => TargetColumn::Name(n.clone()),
        }
    }
}

/// A benchmark id such as `"koza1"`, or a CSV file split per instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    Benchmark(String),
    Csv(CsvSource),
}

impl DatasetSpec {
    pub fn id(&self) -> String {
        match self {
            DatasetSpec::Benchmark(b) => b.to_ascii_lowercase(),
            DatasetSpec::Csv(c) => c.id.clone(),
        }
    }

    fn benchmark(&self) -> Result<Option<Benchmark>> {
        match self {
            DatasetSpec::Benchmark(b) => {
                Benchmark::from_id(b).map(Some).ok_or_else(|| Error::Config(format!("unknown benchmark `{b}`")))
            }
            DatasetSpec::Csv(_) => Ok(None),
        }
    }

    /// Grid-sampled benchmarks have a single instance.
    pub fn is_deterministic(&self) -> bool {
        matches!(self.benchmark(), Ok(Some(b)) if b.is_deterministic())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetSpec>,
    pub algorithms: Vec<Algorithm>,
    pub replications: usize,
    pub base_seed: u64,
    pub mggp: MggpConfig,
    pub efs: EfsConfig,
    pub ffx: FfxConfig,
    /// Overrides the timeout of every algorithm block.
    pub timeout_seconds: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            datasets: Vec::new(),
            algorithms: Vec::new(),
            replications: 100,
            base_seed: 0,
            mggp: MggpConfig::default(),
            efs: EfsConfig::default(),
            ffx: FfxConfig::default(),
            timeout_seconds: None,
            out_dir: None,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms configured".into()));
        }
        if self.datasets.is_empty() {
            return Err(Error::Config("no datasets configured".into()));
        }
        let mut seen = Vec::new();
        for d in &self.datasets {
            d.benchmark()?;
            if let DatasetSpec::Csv(c) = d {
                if !(c.train_fraction > 0.0 && c.train_fraction < 1.0) {
                    return Err(Error::Config(format!("dataset `{}`: train fraction must be in (0, 1)", c.id)));
                }
            }
            let id = d.id();
            if seen.contains(&id) {
                return Err(Error::Config(format!("duplicate dataset `{id}`")));
            }
            seen.push(id);
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].contains(a) {
                return Err(Error::Config(format!("duplicate algorithm `{a}`")));
            }
        }
        if let Some(t) = self.timeout_seconds {
            if !(t > 0.0) {
                return Err(Error::Config("timeout must be positive".into()));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("worker count must be positive".into()));
        }
        self.mggp.validate()?;
        self.efs.validate()?;
        self.ffx.validate()
    }

    fn mggp_config(&self, seed: u64) -> MggpConfig {
        MggpConfig {
            seed,
            timeout_seconds: self.timeout_seconds.unwrap_or(self.mggp.timeout_seconds),
            ..self.mggp.clone()
        }
    }

    fn efs_config(&self, seed: u64) -> EfsConfig {
        EfsConfig {
            seed,
            timeout_seconds: self.timeout_seconds.unwrap_or(self.efs.timeout_seconds),
            ..self.efs.clone()
        }
    }

    fn ffx_config(&self) -> FfxConfig {
        FfxConfig { timeout_seconds: self.timeout_seconds.unwrap_or(self.ffx.timeout_seconds), ..self.ffx.clone() }
    }
}

/// Dataset seed of instance `i`.
pub fn dataset_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(2 * i as u64)
}

/// Algorithm seed of instance `i`.
pub fn algorithm_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(2 * i as u64 + 1)
}

/// Ordinary least squares on the raw input variables.
pub fn lr_fit(data: &Dataset) -> Result<GlmModel> {
    let cols: Vec<Vec<f64>> = (0..data.dim()).map(|j| data.x_train.column(j).iter().copied().collect()).collect();
    let fit = ols_fit(&DesignMatrix::from_columns(&cols, data.y_train.clone())?)?;
    let bases = fit.coefficients.iter().enumerate().map(|(j, &c)| (c, ExprTree::var(j))).collect();
    Ok(GlmModel::new(fit.intercept, bases))
}

/// Fits one algorithm on the training part of `data`.
pub fn fit_model(algorithm: Algorithm, data: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<Model> {
    Ok(match algorithm {
        Algorithm::Gptips => mggp_run(data, &FunctionSet::gptips(), &cfg.mggp_config(seed))?.into(),
        Algorithm::Mgptips => mggp_run(data, &FunctionSet::mgptips(), &cfg.mggp_config(seed))?.into(),
        Algorithm::Efs => efs_run(data, &FunctionSet::efs(), &cfg.efs_config(seed))?.into(),
        Algorithm::Ffx => ffx_run(data, &cfg.ffx_config())?,
        Algorithm::Lr => lr_fit(data)?.into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    /// Replication index.
    pub instance: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub dataset_seed: u64,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub n_nodes: usize,
    pub wall_seconds: f64,
    pub model: Model,
}

impl RunRecord {
    /// Equality ignoring the wall time.
    pub fn same_result(&self, other: &RunRecord) -> bool {
        RunRecord { wall_seconds: 0.0, ..self.clone() } == RunRecord { wall_seconds: 0.0, ..other.clone() }
    }
}

/// Fits and scores one model.
pub fn run_once(
    algorithm: Algorithm,
    data: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    dataset: &str,
    instance: usize,
    dataset_seed: u64,
) -> Result<RunRecord> {
    let start = Instant::now();
    let model = fit_model(algorithm, data, cfg, seed)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let train_rmse = rmse(&model.predict(&data.x_train)?, &data.y_train)?;
    let test_rmse = rmse(&model.predict(&data.x_test)?, &data.y_test)?;
    Ok(RunRecord {
        dataset: dataset.to_string(),
        instance,
        algorithm,
        seed,
        dataset_seed,
        train_rmse,
        test_rmse,
        n_nodes: count_nodes(&model),
        wall_seconds,
        model,
    })
}

/// One scheduled run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub dataset: usize,
    pub algorithm: Algorithm,
    pub instance: usize,
}

/// The run schedule. Grid-sampled datasets get a single instance on which
/// deterministic algorithms run once and stochastic ones `replications` times.
pub fn plan(cfg: &ExperimentConfig) -> Vec<Task> {
    let mut tasks = Vec::new();
    for (d, spec) in cfg.datasets.iter().enumerate() {
        for &algorithm in &cfg.algorithms {
            let runs = if spec.is_deterministic() && algorithm.is_deterministic() { 1 } else { cfg.replications };
            tasks.extend((0..runs).map(|instance| Task { dataset: d, algorithm, instance }));
        }
    }
    tasks
}

/// Loaded sources from which instances are drawn.
struct Sources {
    tables: HashMap<usize, Table>,
}

impl Sources {
    fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let mut tables = HashMap::new();
        for (d, spec) in cfg.datasets.iter().enumerate() {
            if let DatasetSpec::Csv(c) = spec {
                tables.insert(d, load_csv(&c.path, &c.target_column(), c.header)?);
            }
        }
        Ok(Sources { tables })
    }

    fn instance(&self, cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<Dataset> {
        match &cfg.datasets[d] {
            DatasetSpec::Benchmark(_) => {
                let b = cfg.datasets[d].benchmark()?.expect("benchmark spec");
                make_benchmark(&b.spec(), seed)
            }
            DatasetSpec::Csv(c) => split(&self.tables[&d], c.train_fraction, seed, &c.path.to_string_lossy()),
        }
    }
}

/// `<out>/records/<dataset>/<algorithm>-<instance>.json`
pub fn record_path(out: &Path, dataset: &str, algorithm: Algorithm, instance: usize) -> PathBuf {
    out.join("records").join(dataset).join(format!("{algorithm}-{instance:04}.json"))
}

fn execute(cfg: &ExperimentConfig, sources: &Sources, task: &Task) -> Result<RunRecord> {
    let id = cfg.datasets[task.dataset].id();
    let data_seed = dataset_seed(cfg.base_seed, task.instance);
    let seed = algorithm_seed(cfg.base_seed, task.instance);
    let path = cfg.out_dir.as_ref().map(|out| record_path(out, &id, task.algorithm, task.instance));
    if let Some(p) = &path {
        if let Ok(text) = fs::read_to_string(p) {
            if let Ok(rec) = serde_json::from_str::<RunRecord>(&text) {
                if rec.dataset == id
                    && rec.algorithm == task.algorithm
                    && rec.instance == task.instance
                    && rec.seed == seed
                {
                    return Ok(rec);
                }
            }
        }
    }
    let data = sources.instance(cfg, task.dataset, data_seed)?;
    let rec = run_once(task.algorithm, &data, cfg, seed, &id, task.instance, data_seed)?;
    if let Some(p) = &path {
        fs::create_dir_all(p.parent().expect("record path has a parent"))?;
        fs::write(p, serde_json::to_string_pretty(&rec)?)?;
    }
    Ok(rec)
}

/// Worker count: environment override, then the configuration, then the
/// available parallelism.
pub fn resolve_workers(cfg: &ExperimentConfig) -> Result<usize> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        };
    }
    Ok(cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)))
}

/// Executes the whole schedule on `workers` threads; records come back in
/// schedule order. Existing record files under the output directory are reused.
pub fn run_records(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let sources = Sources::load(cfg)?;
    let tasks = plan(cfg);
    if workers <= 1 {
        return tasks.iter().map(|t| execute(cfg, &sources, t)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| tasks.par_iter().map(|t| execute(cfg, &sources, t)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub median_train_rmse: f64,
    pub median_test_rmse: f64,
    pub median_nodes: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub algorithms: Vec<AlgorithmSummary>,
    /// Test RMSE ranks over all algorithms.
    pub rmse_ranks: Option<RankTable>,
    /// Node-count ranks over the symbolic regression algorithms.
    pub node_ranks: Option<RankTable>,
}

impl DatasetSummary {
    pub fn get(&self, algorithm: Algorithm) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|a| a.algorithm == algorithm)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub base_alpha: f64,
    pub datasets: Vec<DatasetSummary>,
}

impl Summary {
    pub fn dataset(&self, id: &str) -> Option<&DatasetSummary> {
        self.datasets.iter().find(|d| d.dataset == id)
    }

    /// Median tables across datasets followed by the per-dataset rank tables.
    pub fn to_text(&self) -> String {
        let mut algs: Vec<Algorithm> =
            self.datasets.iter().flat_map(|d| d.algorithms.iter().map(|a| a.algorithm)).collect();
        algs.sort();
        algs.dedup();
        let mut out = String::new();
        let matrix = |out: &mut String, title: &str, algs: &[Algorithm], pick: &dyn Fn(&AlgorithmSummary) -> f64| {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "{:<10}", "dataset");
            for a in algs {
                let _ = write!(out, " {:>12}", a.id());
            }
            out.push('\n');
            for d in &self.datasets {
                let _ = write!(out, "{:<10}", d.dataset);
                for a in algs {
                    match d.get(*a) {
                        Some(s) => {
                            let _ = write!(out, " {:>12.4}", pick(s));
                        }
                        None => {
                            let _ = write!(out, " {:>12}", "-");
                        }
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        };
        matrix(&mut out, "median test RMSE", &algs, &|s| s.median_test_rmse);
        let sr: Vec<Algorithm> = algs.iter().copied().filter(|a| a.is_symbolic()).collect();
        matrix(&mut out, "median node count", &sr, &|s| s.median_nodes);
        for d in &self.datasets {
            if let Some(t) = &d.rmse_ranks {
                let _ = writeln!(out, "{}: test RMSE ranks (alpha = {:.4})", d.dataset, t.alpha);
                out.push_str(&t.to_text());
                out.push('\n');
            }
            if let Some(t) = &d.node_ranks {
                let _ = writeln!(out, "{}: node count ranks (alpha = {:.4})", d.dataset, t.alpha);
                out.push_str(&t.to_text());
                out.push('\n');
            }
        }
        out
    }
}

/// Groups records by dataset (first-appearance order) and algorithm.
fn group(records: &[RunRecord]) -> Vec<(String, Vec<(Algorithm, Vec<&RunRecord>)>)> {
    let mut out: Vec<(String, Vec<(Algorithm, Vec<&RunRecord>)>)> = Vec::new();
    for r in records {
        let pos = match out.iter().position(|(d, _)| *d == r.dataset) {
            Some(p) => p,
            None => {
                out.push((r.dataset.clone(), Vec::new()));
                out.len() - 1
            }
        };
        let algs = &mut out[pos].1;
        match algs.iter_mut().find(|(a, _)| *a == r.algorithm) {
            Some((_, v)) => v.push(r),
            None => algs.push((r.algorithm, vec![r])),
        }
    }
    for (_, algs) in &mut out {
        algs.sort_by_key(|(a, _)| *a);
        for (_, v) in algs.iter_mut() {
            v.sort_by_key(|r| r.instance);
        }
    }
    out
}

/// Lower medians per (dataset, algorithm) and rank tables per dataset.
pub fn aggregate(records: &[RunRecord], base_alpha: f64) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Argument("no records to aggregate".into()));
    }
    let mut datasets = Vec::new();
    for (dataset, algs) in group(records) {
        let column = |v: &[&RunRecord], f: fn(&RunRecord) -> f64| v.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let algorithms = algs
            .iter()
            .map(|(a, v)| AlgorithmSummary {
                algorithm: *a,
                runs: v.len(),
                median_train_rmse: lower_median(&column(v, |r| r.train_rmse)).expect("non-empty"),
                median_test_rmse: lower_median(&column(v, |r| r.test_rmse)).expect("non-empty"),
                median_nodes: lower_median(&column(v, |r| r.n_nodes as f64)).expect("non-empty"),
            })
            .collect();
        let rmse_samples: Vec<(String, Vec<f64>)> =
            algs.iter().map(|(a, v)| (a.id().to_string(), column(v, |r| r.test_rmse))).collect();
        let node_samples: Vec<(String, Vec<f64>)> = algs
            .iter()
            .filter(|(a, _)| a.is_symbolic())
            .map(|(a, v)| (a.id().to_string(), column(v, |r| r.n_nodes as f64)))
            .collect();
        let table = |s: &[(String, Vec<f64>)]| -> Result<Option<RankTable>> {
            if s.len() < 2 {
                Ok(None)
            } else {
                build_rank_table(s, base_alpha).map(Some)
            }
        };
        datasets.push(DatasetSummary {
            dataset,
            algorithms,
            rmse_ranks: table(&rmse_samples)?,
            node_ranks: table(&node_samples)?,
        });
    }
    Ok(Summary { base_alpha, datasets })
}

/// Five-number summary with 1.5·IQR outliers; `min` and `max` are the whisker ends.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

pub fn box_summary(values: &[f64]) -> Option<BoxSummary> {
    let q1 = quantile_midpoint(values, 0.25)?;
    let median = quantile_midpoint(values, 0.5)?;
    let q3 = quantile_midpoint(values, 0.75)?;
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (inside, outliers): (Vec<f64>, Vec<f64>) = sorted.iter().partition(|&&v| v >= lo && v <= hi);
    Some(BoxSummary {
        min: inside.first().copied().unwrap_or(q1),
        q1,
        median,
        q3,
        max: inside.last().copied().unwrap_or(q3),
        outliers,
    })
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_record(header).map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<dataset>_scatter.csv` and `<dataset>_box.csv` for every dataset.
pub fn emit_plot_data(records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Argument("no records to plot".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (dataset, algs) in group(records) {
        let scatter: Vec<Vec<String>> = algs
            .iter()
            .flat_map(|(a, v)| {
                v.iter().map(move |r| {
                    vec![a.id().to_string(), r.instance.to_string(), r.n_nodes.to_string(), r.test_rmse.to_string()]
                })
            })
            .collect();
        let path = out_dir.join(format!("{dataset}_scatter.csv"));
        write_csv(&path, &["algorithm", "instance", "n_nodes", "test_rmse"], &scatter)?;
        written.push(path);

        let mut rows = Vec::new();
        for (a, v) in &algs {
            for (phase, values) in [
                ("train", v.iter().map(|r| r.train_rmse).collect::<Vec<_>>()),
                ("test", v.iter().map(|r| r.test_rmse).collect()),
            ] {
                let b = box_summary(&values).expect("non-empty group");
                rows.push(vec![
                    a.id().to_string(),
                    phase.to_string(),
                    b.min.to_string(),
                    b.q1.to_string(),
                    b.median.to_string(),
                    b.q3.to_string(),
                    b.max.to_string(),
                    String::new(),
                ]);
                for o in b.outliers {
                    let mut row = vec![String::new(); 8];
                    row[0] = a.id().to_string();
                    row[1] = phase.to_string();
                    row[7] = o.to_string();
                    rows.push(row);
                }
            }
        }
        let path = out_dir.join(format!("{dataset}_box.csv"));
        write_csv(&path, &["algorithm", "phase", "min", "q1", "median", "q3", "max", "outlier"], &rows)?;
        written.push(path);
    }
    Ok(written)
}

/// All records below `dir` (either an output directory or its `records` folder),
/// sorted by dataset, algorithm and instance.
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let root = if dir.join("records").is_dir() { dir.join("records") } else { dir.to_path_buf() };
    let mut files = Vec::new();
    let mut stack = vec![root];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::Data(format!("{}: {e}", d.display())))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "json") {
                files.push(p);
            }
        }
    }
    let mut records = files
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<RunRecord>(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| (&a.dataset, a.algorithm, a.instance).cmp(&(&b.dataset, b.algorithm, b.instance)));
    Ok(records)
}

/// Writes `report.txt`, `report.json` and the plot data into `out_dir`.
pub fn write_report(records: &[RunRecord], summary: &Summary, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let txt = out_dir.join("report.txt");
    let json = out_dir.join("report.json");
    fs::write(&txt, summary.to_text())?;
    fs::write(&json, serde_json::to_string_pretty(summary)?)?;
    let mut written = vec![txt, json];
    written.extend(emit_plot_data(records, &out_dir.join("plots"))?);
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub records: Vec<RunRecord>,
    pub summary: Summary,
}

/// Runs the schedule, aggregates it and writes the outputs when an output
/// directory is configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let records = run_records(cfg, resolve_workers(cfg)?)?;
    let summary = aggregate(&records, BASE_ALPHA)?;
    if let Some(out) = &cfg.out_dir {
        write_report(&records, &summary, out)?;
    }
    Ok(ComparisonReport { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(dataset: &str, algorithm: Algorithm, instance: usize, test: f64, nodes: usize) -> RunRecord {
        RunRecord {
            dataset: dataset.into(),
            instance,
            algorithm,
            seed: 0,
            dataset_seed: 0,
            train_rmse: test / 2.0,
            test_rmse: test,
            n_nodes: nodes,
            wall_seconds: 0.0,
            model: GlmModel::constant(0.0).into(),
        }
    }

    fn config(datasets: &[&str], algorithms: &[Algorithm], reps: usize) -> ExperimentConfig {
        ExperimentConfig {
            datasets: datasets.iter().map(|d| DatasetSpec::Benchmark(d.to_string())).collect(),
            algorithms: algorithms.to_vec(),
            replications: reps,
            ..Default::default()
        }
    }

    #[test]
    fn seed_schedule_interleaves() {
        assert_eq!(dataset_seed(10, 0), 10);
        assert_eq!(algorithm_seed(10, 0), 11);
        assert_eq!(dataset_seed(10, 3), 16);
        assert_eq!(algorithm_seed(10, 3), 17);
    }

    #[test]
    fn grid_datasets_run_deterministic_algorithms_once() {
        let cfg = config(&["s1", "koza1"], &[Algorithm::Ffx, Algorithm::Mgptips, Algorithm::Lr], 4);
        let tasks = plan(&cfg);
        let count = |d: usize, a: Algorithm| tasks.iter().filter(|t| t.dataset == d && t.algorithm == a).count();
        assert_eq!(count(0, Algorithm::Ffx), 1);
        assert_eq!(count(0, Algorithm::Lr), 1);
        assert_eq!(count(0, Algorithm::Mgptips), 4);
        assert_eq!(count(1, Algorithm::Ffx), 4);
        assert_eq!(tasks.len(), 1 + 4 + 1 + 12);
    }

    #[test]
    fn config_validation() {
        assert!(config(&["koza1"], &[Algorithm::Lr], 1).validate().is_ok());
        assert!(matches!(config(&["nope"], &[Algorithm::Lr], 1).validate(), Err(Error::Config(_))));
        assert!(matches!(config(&["koza1"], &[], 1).validate(), Err(Error::Config(_))));
        assert!(matches!(config(&["koza1"], &[Algorithm::Lr], 0).validate(), Err(Error::Config(_))));
        assert!(config(&["koza1", "koza1"], &[Algorithm::Lr], 1).validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"datasets":["koza1"],"algorithms":["svr"]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"datasets":["koza1"],"algorithms":["lr"],"bogus":1}"#).is_err());
        let cfg = ExperimentConfig::from_json(
            r#"{"datasets":["koza1",{"id":"enc","path":"enc.csv","target":8}],"algorithms":["lr","ffx"],
                "replications":3,"mggp":{"population_size":20}}"#,
        )
        .unwrap();
        assert_eq!(cfg.replications, 3);
        assert_eq!(cfg.mggp.population_size, 20);
        assert_eq!(cfg.mggp.generations, MggpConfig::default().generations);
        assert_eq!(cfg.datasets[1].id(), "enc");
    }

    #[test]
    fn lr_recovers_linear_target() {
        let x = nalgebra::DMatrix::from_fn(30, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 + j as f64 * 0.5 * i as f64);
        let y: Vec<f64> = (0..30).map(|i| 1.0 + 2.0 * x[(i, 0)] - 0.5 * x[(i, 1)]).collect();
        let data = Dataset::train_only(vec!["a".into(), "b".into()], x, y).unwrap();
        let m = lr_fit(&data).unwrap();
        assert!((m.intercept - 1.0).abs() < 1e-9);
        assert!((m.bases[0].coefficient - 2.0).abs() < 1e-9);
        assert!((m.bases[1].coefficient + 0.5).abs() < 1e-9);
    }

    #[test]
    fn medians_match_sort_and_pick() {
        let tests = [0.4, 0.1, 0.9, 0.3, 0.7, 0.2];
        let nodes = [5, 9, 3, 7, 1, 4];
        let mut recs = Vec::new();
        for (i, (&t, &n)) in tests.iter().zip(&nodes).enumerate() {
            recs.push(record("d", Algorithm::Efs, i, t, n));
            recs.push(record("d", Algorithm::Lr, i, t * 2.0, n + 1));
        }
        let s = aggregate(&recs, BASE_ALPHA).unwrap();
        let efs = s.dataset("d").unwrap().get(Algorithm::Efs).unwrap();
        let pick = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[(v.len() - 1) / 2]
        };
        assert_eq!(efs.median_test_rmse, pick(&tests));
        assert_eq!(efs.median_nodes, pick(&nodes.map(|n| n as f64)));
        assert_eq!(efs.runs, 6);
        // only one symbolic algorithm: no complexity ranking
        assert!(s.datasets[0].node_ranks.is_none());
        assert_eq!(s.datasets[0].rmse_ranks.as_ref().unwrap().alpha, BASE_ALPHA);
    }

    #[test]
    fn complexity_table_uses_symbolic_pairs_only() {
        let mut recs = Vec::new();
        for a in Algorithm::ALL {
            for i in 0..5 {
                recs.push(record("d", a, i, 1.0 + i as f64, 3 + i));
            }
        }
        let s = aggregate(&recs, BASE_ALPHA).unwrap();
        let d = &s.datasets[0];
        assert_eq!(d.node_ranks.as_ref().unwrap().alpha, 0.05 / 6.0);
        assert_eq!(d.node_ranks.as_ref().unwrap().entries.len(), 4);
        assert_eq!(d.rmse_ranks.as_ref().unwrap().alpha, 0.05 / 10.0);
    }

    #[test]
    fn box_summary_examples() {
        let b = box_summary(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!((b.min, b.max), (1.0, 4.0));
        let one = box_summary(&[0.5]).unwrap();
        assert_eq!([one.min, one.q1, one.median, one.q3, one.max], [0.5; 5]);
        assert!(one.outliers.is_empty());
        assert!(box_summary(&[]).is_none());
    }

    #[test]
    fn plot_files() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<RunRecord> = [1.0, 2.0, 3.0, 4.0, 100.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| record("ub", Algorithm::Ffx, i, v, 7))
            .collect();
        let files = emit_plot_data(&recs, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let scatter = fs::read_to_string(dir.path().join("ub_scatter.csv")).unwrap();
        assert_eq!(scatter.lines().count(), 1 + recs.len());
        assert_eq!(scatter.lines().next().unwrap(), "algorithm,instance,n_nodes,test_rmse");
        let boxes = fs::read_to_string(dir.path().join("ub_box.csv")).unwrap();
        let lines: Vec<&str> = boxes.lines().collect();
        assert_eq!(lines[0], "algorithm,phase,min,q1,median,q3,max,outlier");
        assert_eq!(lines[1], "ffx,train,0.5,1,1.5,2,2,");
        assert!(lines.contains(&"ffx,test,1,2,3,4,4,"));
        assert!(lines.contains(&"ffx,test,,,,,,100"));
    }

    #[test]
    fn records_round_trip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(&["koza1"], &[Algorithm::Lr], 3);
        cfg.out_dir = Some(dir.path().to_path_buf());
        let first = run_records(&cfg, 1).unwrap();
        assert_eq!(first.len(), 3);
        // a tampered record is kept as is on resume
        let p = record_path(dir.path(), "koza1", Algorithm::Lr, 1);
        let mut tampered: RunRecord = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        tampered.wall_seconds = 123.0;
        fs::write(&p, serde_json::to_string(&tampered).unwrap()).unwrap();
        let second = run_records(&cfg, 1).unwrap();
        assert_eq!(second[1].wall_seconds, 123.0);
        assert!(first.iter().zip(&second).all(|(a, b)| a.same_result(b)));
        let mut read = read_records(dir.path()).unwrap();
        read.sort_by_key(|r| r.instance);
        assert_eq!(read, second);
    }
}
