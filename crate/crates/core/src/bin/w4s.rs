use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use w4s::config::{CliConfig, ConfigError};
use w4s::domain::validate_workflow_program;
use w4s::engine::session::{read_artifacts, read_run_log, CONFIG_FILE};
use w4s::engine::{replay_run, Mode, Session, SessionError};
use w4s::eval::{load_dataset, tagged_rows, EvalError};
use w4s::report::{write_report, ReportError};
use w4s::rlao::{export_dataset, read_dataset};
use w4s::rwr::{loss_curve_csv, template_library, train_toy, ToyBatch, ToyPolicy};
use w4s::util::{sha256_hex, write_jsonl};

#[derive(Parser)]
#[command(name = "w4s", version, about = "Weak-for-strong workflow optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the loop sampling one action per iteration.
    Optimize(RunArgs),
    /// Run the loop sampling m candidates per iteration, with rewards.
    Collect(RunArgs),
    /// Write the reward-weighted training dataset of a run.
    ExportRlao {
        #[command(flatten)]
        run: RunRef,
        /// Output file; defaults to <run>/rlao_dataset.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the run's tau.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Score the run's best workflow (or --workflow) on the test split.
    Eval {
        #[command(flatten)]
        run: RunRef,
        #[arg(long)]
        workflow: Option<PathBuf>,
    },
    /// Re-execute a run from its recorded logs with no live backend.
    Replay {
        #[command(flatten)]
        run: RunRef,
        /// Output directory; defaults to <run>/replay.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild report.json and curve.csv of a run.
    Report {
        #[command(flatten)]
        run: RunRef,
    },
    /// Split the validation rows of a dataset into tagged private/public rows.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "qa")]
        family: String,
    },
    /// Train the toy policy on an exported dataset and write its loss curve.
    TrainToy {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 8)]
        buckets: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        /// Defaults to <dataset dir>/toy_loss.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    m: Option<usize>,
    /// Overwrite an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunRef {
    /// Run directory, or a run id under --runs-dir.
    #[arg(long = "run")]
    run: String,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
}

impl RunRef {
    fn dir(&self) -> PathBuf {
        let direct = PathBuf::from(&self.run);
        if direct.join(CONFIG_FILE).exists() {
            direct
        } else {
            self.runs_dir.join(&self.run)
        }
    }
}

/// Failure classes that map to distinct exit codes.
#[derive(Debug, thiserror::Error)]
enum Exit {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Backend(String),
}

fn classify(e: SessionError) -> anyhow::Error {
    if e.is_config() {
        Exit::Config(e.to_string()).into()
    } else if e.is_backend() {
        Exit::Backend(e.to_string()).into()
    } else {
        e.into()
    }
}

fn config_error(e: impl std::fmt::Display) -> anyhow::Error {
    Exit::Config(e.to_string()).into()
}

fn load_config(args: &RunArgs) -> Result<CliConfig> {
    let mut cfg = CliConfig::load(&args.config).map_err(config_error)?;
    if let Some(id) = &args.run_id {
        cfg.run_id = Some(id.clone());
    }
    if let Some(n) = args.iterations {
        cfg.run.iterations = n;
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(m) = args.m {
        cfg.run.m = m;
    }
    Ok(cfg)
}

fn run_loop(args: &RunArgs, mode: Mode) -> Result<()> {
    let session = Session::prepare(load_config(args)?).map_err(classify)?;
    let dir = session.run_dir(mode);
    let art = session.run(mode, &dir, args.force).map_err(classify)?;
    println!("run dir: {}", dir.display());
    println!("best score: {:.4} (iteration {})", art.best_score, art.best_iteration.map_or("seed".into(), |i| i.to_string()));
    Ok(())
}

fn export(run: &RunRef, out: Option<PathBuf>, tau: Option<f64>) -> Result<()> {
    let dir = run.dir();
    let artifacts = read_artifacts(&dir).map_err(config_error)?;
    let config_path = dir.join(CONFIG_FILE);
    let config_bytes = std::fs::read(&config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let config: CliConfig = serde_json::from_slice(&config_bytes).context("parsing stored config")?;
    let log = read_run_log(&dir)?;
    let out = out.unwrap_or_else(|| dir.join("rlao_dataset.jsonl"));
    let tau = tau.unwrap_or(config.run.tau);
    let counts = export_dataset(&artifacts.task, &log, tau, &sha256_hex(&config_bytes), &out)?;
    println!(
        "wrote {} records from {} trajectories ({} one-turn, {} two-turn) to {}",
        counts.records,
        counts.trajectories,
        counts.one_turn,
        counts.two_turn,
        out.display()
    );
    Ok(())
}

fn eval(run: &RunRef, workflow: Option<PathBuf>) -> Result<()> {
    let dir = run.dir();
    let session = Session::from_run_dir(&dir).map_err(classify)?;
    let program = match workflow {
        Some(p) => {
            let src = std::fs::read_to_string(&p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            Some(validate_workflow_program(&src).map_err(config_error)?)
        }
        None => None,
    };
    let report = session.evaluate_test(&dir, program).map_err(classify)?;
    write_report(&dir)?;
    println!("test {}: {:.4} over {} samples", session.config.task.metric.label(), report.aggregate, report.per_sample.len());
    Ok(())
}

fn replay(run: &RunRef, out: Option<PathBuf>) -> Result<()> {
    let dir = run.dir();
    let out = out.unwrap_or_else(|| dir.join("replay"));
    let outcome = replay_run(&dir, &out).map_err(classify)?;
    for d in &outcome.divergences {
        eprintln!("divergence: {d}");
    }
    if !outcome.identical {
        bail!("replayed report differs from {}", dir.join("report.json").display());
    }
    println!("replay identical: {}", out.display());
    Ok(())
}

fn split(dataset: &Path, out: &Path, ratio: f64, seed: u64, family: &str) -> Result<()> {
    let family = serde_json::from_value(serde_json::Value::String(family.to_string()))
        .map_err(|_| config_error(format!("unknown task family {family:?}")))?;
    let ds = load_dataset(dataset, family, ratio, seed).map_err(|e| match e {
        EvalError::DatasetMissing(_) => config_error(e),
        other => other.into(),
    })?;
    write_jsonl(out, &tagged_rows(&ds))?;
    println!("private {} / public {} / test {}", ds.private_val.len(), ds.public_val.len(), ds.test.len());
    Ok(())
}

fn train(dataset: &Path, buckets: usize, lr: f64, epochs: usize, out: Option<PathBuf>) -> Result<()> {
    if buckets == 0 {
        return Err(config_error("--buckets must be positive"));
    }
    let (header, records) = read_dataset(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    if records.is_empty() {
        bail!("dataset has no records");
    }
    let policy = ToyPolicy::uniform(template_library(&records), buckets);
    let batch = ToyBatch::from_records(&policy, &records)?;
    let (_, curve) = train_toy(&policy, &batch, lr, epochs)?;
    let out = out.unwrap_or_else(|| dataset.parent().unwrap_or(Path::new(".")).join("toy_loss.csv"));
    std::fs::write(&out, loss_curve_csv(&curve))?;
    println!(
        "tau {} | {} records | {} templates | loss {:.6} -> {:.6} | curve {}",
        header.tau,
        records.len(),
        policy.templates.len(),
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Optimize(a) => run_loop(&a, Mode::Infer),
        Command::Collect(a) => run_loop(&a, Mode::Collect),
        Command::ExportRlao { run, out, tau } => export(&run, out, tau),
        Command::Eval { run, workflow } => eval(&run, workflow),
        Command::Replay { run, out } => replay(&run, out),
        Command::Report { run } => {
            let dir = run.dir();
            let report = write_report(&dir).map_err(|e| match e {
                ReportError::IncompleteRun(_) => config_error(e),
                other => other.into(),
            })?;
            println!("{} iterations, best {:.4}", report.iterations_run, report.best_score);
            Ok(())
        }
        Command::Split { dataset, out, ratio, seed, family } => split(&dataset, &out, ratio, seed, &family),
        Command::TrainToy { dataset, buckets, lr, epochs, out } => train(&dataset, buckets, lr, epochs, out),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Exit>() {
                Some(Exit::Config(_)) => ExitCode::from(2),
                Some(Exit::Backend(_)) => ExitCode::from(3),
                None if e.downcast_ref::<ConfigError>().is_some() => ExitCode::from(2),
                None => ExitCode::from(1),
            }
        }
    }
}
