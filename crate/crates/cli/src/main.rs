//! Command line front end: train the three tasks, evaluate saved runs and
//! summarize metric logs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rpw_core::harness::metrics::render_report;
use rpw_core::harness::train::{HarnessError, METRICS_FILE};
use rpw_core::harness::{evaluate, load_run, train, write_run, MetricLog, TaskId, TrainConfig};
use rpw_core::ModelError;

#[derive(Parser, Debug)]
#[command(name = "rpw", version, about = "Train and evaluate set-to-sequence models on synthetic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sort sets of uniform reals with a pointer model.
    TrainSort(RunArgs),
    /// Fit a sequence model to samples of a star graphical model.
    TrainStar(RunArgs),
    /// Fit a sequence model to Markov n-grams under a fixed ordering.
    TrainNgram(RunArgs),
    /// Fit a sequence model to Markov n-grams while searching over orderings.
    OrderSearch {
        #[command(flatten)]
        run: RunArgs,
        /// Admissible orderings, `;`-separated (default: all of them).
        #[arg(long)]
        candidates: Option<String>,
        /// Steps of uniform pretraining before orderings are selected.
        #[arg(long)]
        pretrain_steps: Option<String>,
        /// `sampled` or `exhaustive-max`.
        #[arg(long)]
        selection: Option<String>,
    },
    /// Re-evaluate a saved run directory on its test split.
    Eval {
        dir: PathBuf,
    },
    /// Summarize a metric log (a CSV file or a run directory).
    Report {
        path: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for config.txt, metrics.csv and model.rpw.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    process_steps: Option<usize>,
    #[arg(long)]
    glimpses: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    view: Option<String>,
    #[arg(long)]
    ordering: Option<String>,
    /// Any other configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Suppress per-validation progress lines.
    #[arg(long, short)]
    quiet: bool,
}

impl RunArgs {
    fn config(&self, task: TaskId) -> Result<TrainConfig, HarnessError> {
        let mut cfg = TrainConfig::for_task(task);
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            cfg.apply_text(&text).map_err(HarnessError::Config)?;
            cfg.task = task;
        }
        let flags: [(&str, Option<String>); 15] = [
            ("model", self.model.clone()),
            ("n", self.n.map(|v| v.to_string())),
            ("process_steps", self.process_steps.map(|v| v.to_string())),
            ("glimpses", self.glimpses.map(|v| v.to_string())),
            ("hidden", self.hidden.map(|v| v.to_string())),
            ("optimizer", self.optimizer.clone()),
            ("lr", self.lr.map(|v| v.to_string())),
            ("clip", self.clip.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("max_steps", self.max_steps.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("data_seed", self.data_seed.map(|v| v.to_string())),
            ("train_size", self.train_size.map(|v| v.to_string())),
            ("view", self.view.clone()),
            ("ordering", self.ordering.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(HarnessError::Config)?;
            }
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(ModelError::Invalid(format!("--set expects KEY=VALUE, got {kv:?}"))))?;
            cfg.set(k, v).map_err(HarnessError::Config)?;
        }
        cfg.validate().map_err(HarnessError::Config)?;
        Ok(cfg)
    }
}

fn run_training(args: &RunArgs, cfg: TrainConfig) -> Result<(), HarnessError> {
    let mut print = |line: &str| eprintln!("{line}");
    let progress: Option<&mut dyn FnMut(&str)> = if args.quiet { None } else { Some(&mut print) };
    let run = train(&cfg, progress)?;
    if let Some(dir) = &args.out {
        write_run(dir, &run)?;
        eprintln!("wrote {}", dir.display());
    }
    print_metrics(&run.test);
    Ok(())
}

/// Writes `name<TAB>value` lines; a closed pipe on stdout is not an error.
fn print_metrics(metrics: &[(String, f64)]) {
    let mut out = std::io::stdout().lock();
    for (name, value) in metrics {
        if writeln!(out, "{name}\t{value:.6}").is_err() {
            return;
        }
    }
}

fn report(path: &Path) -> Result<(), HarnessError> {
    let file = if path.is_dir() { path.join(METRICS_FILE) } else { path.to_path_buf() };
    let log = MetricLog::from_csv(&std::fs::read_to_string(file)?)?;
    let _ = std::io::stdout().lock().write_all(render_report(&log).as_bytes());
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::TrainSort(args) => run_training(&args, args.config(TaskId::Sort)?),
        Command::TrainStar(args) => run_training(&args, args.config(TaskId::Star)?),
        Command::TrainNgram(args) => run_training(&args, args.config(TaskId::Ngram)?),
        Command::OrderSearch { run, candidates, pretrain_steps, selection } => {
            let mut cfg = run.config(TaskId::Ngram)?;
            let search = [("search", Some("on".to_string())), ("candidates", candidates), ("pretrain_steps", pretrain_steps), ("selection", selection)];
            for (key, value) in search {
                if let Some(v) = value {
                    cfg.set(key, &v).map_err(HarnessError::Config)?;
                }
            }
            cfg.validate().map_err(HarnessError::Config)?;
            run_training(&run, cfg)
        }
        Command::Eval { dir } => {
            let (cfg, model) = load_run(&dir)?;
            print_metrics(&evaluate(&cfg, &model)?);
            Ok(())
        }
        Command::Report { path } => report(&path),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
