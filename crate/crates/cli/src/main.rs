use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glmsr::dataset::{load_csv, make_benchmark, split, write_dataset, Benchmark, Dataset, Provenance, TargetColumn};
use glmsr::harness::{self, Algorithm, ExperimentConfig};
use glmsr::Error;

#[derive(Parser)]
#[command(name = "glmsr", version, about = "Symbolic regression benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a benchmark instance as train/test CSV files.
    Generate {
        benchmark: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one algorithm and print the model and its run record.
    Run {
        algorithm: String,
        #[arg(long)]
        train: PathBuf,
        /// Separate test file; otherwise the training file is split.
        #[arg(long, conflicts_with = "split")]
        test: Option<PathBuf>,
        #[arg(long)]
        split: Option<f64>,
        /// Seeds both the split and the algorithm.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON with optional "mggp", "efs", "ffx" and "timeout_seconds" entries.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Target column index or header name; defaults to the last column.
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        no_header: bool,
    },
    /// Run a full experiment described by a JSON file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Aggregate existing run records into tables and plot data.
    Report {
        #[arg(long)]
        records: PathBuf,
        /// Defaults to the records directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Json(_) => 3,
        Error::Structural(_) | Error::Numeric(_) => 1,
    }
}

fn target_column(target: Option<&str>) -> TargetColumn {
    match target {
        None => TargetColumn::Last,
        Some(t) => t.parse().map(TargetColumn::Index).unwrap_or_else(|_| TargetColumn::Name(t.to_string())),
    }
}

fn algorithm_blocks(path: Option<&Path>) -> glmsr::Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.mggp.validate()?;
    cfg.efs.validate()?;
    cfg.ffx.validate()?;
    if cfg.timeout_seconds.is_some_and(|t| !(t > 0.0)) {
        return Err(Error::Config("timeout must be positive".into()));
    }
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn run(
    algorithm: &str,
    train: &Path,
    test: Option<&Path>,
    fraction: Option<f64>,
    seed: u64,
    config: Option<&Path>,
    target: Option<&str>,
    header: bool,
) -> glmsr::Result<()> {
    let algorithm = Algorithm::from_id(algorithm)?;
    let cfg = algorithm_blocks(config)?;
    let target = target_column(target);
    let table = load_csv(train, &target, header)?;
    let data = match test {
        Some(test) => {
            let t = load_csv(test, &target, header)?;
            if t.names != table.names {
                return Err(Error::Data("train and test files have different columns".into()));
            }
            Dataset::new(table.names, table.x, table.y, t.x, t.y, Provenance::Manual)?
        }
        None => split(&table, fraction.unwrap_or(0.7), seed, &train.to_string_lossy())?,
    };
    let id = train.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let record = harness::run_once(algorithm, &data, &cfg, seed, &id, 0, seed)?;
    println!("{}", record.model.infix());
    println!("{}", serde_json::to_string(&record)?);
    Ok(())
}

fn report(records: &Path, out: Option<&Path>) -> glmsr::Result<()> {
    let recs = harness::read_records(records)?;
    let summary = harness::aggregate(&recs, harness::BASE_ALPHA)?;
    harness::write_report(&recs, &summary, out.unwrap_or(records))?;
    print!("{}", summary.to_text());
    Ok(())
}

fn main_inner(cli: Cli) -> glmsr::Result<()> {
    match cli.command {
        Command::Generate { benchmark, seed, out } => {
            let b = Benchmark::from_id(&benchmark)
                .ok_or_else(|| Error::Config(format!("unknown benchmark `{benchmark}`")))?;
            let data = make_benchmark(&b.spec(), seed)?;
            for p in write_dataset(&data, &out, &format!("{}_{seed}", b.id()))? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Run { algorithm, train, test, split, seed, config, target, no_header } => {
            run(&algorithm, &train, test.as_deref(), split, seed, config.as_deref(), target.as_deref(), !no_header)
        }
        Command::Experiment { config, out, workers } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if out.is_some() {
                cfg.out_dir = out;
            }
            if workers.is_some() {
                cfg.workers = workers;
            }
            let report = harness::run_experiment(&cfg)?;
            print!("{}", report.summary.to_text());
            Ok(())
        }
        Command::Report { records, out } => report(&records, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("glmsr: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
