mod closure;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;
use optifab_core::{GenerationMode, Strategy};
use optifab_fabric::distributed::{run_worker, WorkerConfig, WorkerError};
use optifab_fabric::driver::{write_report, RunOutcome};
use optifab_fabric::journal::{read_journal, EventKind};
use optifab_fabric::report::summary_text;
use optifab_fabric::runners::{exec_task_main, BatchCommand};
use optifab_fabric::{run_experiment, DriverError, DriverOptions, ExperimentConfig, Registry, RunControl, RunnerKind};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Parser)]
#[command(name = "optifab", version, about = "Distributed multi-objective optimization experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment to completion and write its report.
    Run {
        config: PathBuf,
        /// Continue from the journal at the configured path.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Drive an experiment with the distributed runner, serving workers and
    /// the result broker on one port.
    Coordinator {
        config: PathBuf,
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Register with a coordinator and execute tasks until shut down.
    Worker {
        #[arg(long, value_name = "HOST:PORT")]
        coordinator: String,
        #[arg(long, default_value_t = 1)]
        slots: usize,
        #[arg(long)]
        worker_id: Option<String>,
        /// Per-task timeout in seconds.
        #[arg(long, default_value_t = 300.0)]
        task_timeout: f64,
        /// Give up if the first registration has not succeeded after this
        /// many seconds (default: keep trying).
        #[arg(long)]
        register_timeout: Option<f64>,
    },
    /// Regenerate report CSVs and a text summary from a journal.
    Report {
        journal: PathBuf,
        /// Output directory (default: the run's report directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// End-to-end closure suites.
    Closure {
        suite: Suite,
        #[arg(long, default_value = "closure-out")]
        out: PathBuf,
        /// Suite two: also time a serial in-process run.
        #[arg(long)]
        serial_baseline: bool,
    },
    /// Execute one task envelope from stdin, writing the result to stdout.
    #[command(hide = true)]
    ExecTask {
        #[arg(long, default_value_t = 300.0)]
        timeout: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    One,
    Two,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunnerArg {
    InProcess,
    Batch,
    Distributed,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Mobo,
    Mogo,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Synchronous,
    Asynchronous,
}

/// Command-line overrides of config fields.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long, value_enum)]
    runner: Option<RunnerArg>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    queue_latency: Option<f64>,
    /// Coordinator listen address for the distributed runner.
    #[arg(long, value_name = "HOST:PORT")]
    coordinator: Option<String>,
    #[arg(long)]
    heartbeat_interval: Option<f64>,
    #[arg(long)]
    worker_grace: Option<u32>,
    #[arg(long)]
    task_timeout: Option<f64>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    generation_mode: Option<ModeArg>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(r) = self.runner {
            cfg.runner.kind = match r {
                RunnerArg::InProcess => RunnerKind::InProcess,
                RunnerArg::Batch => RunnerKind::BatchSubprocess,
                RunnerArg::Distributed => RunnerKind::Distributed,
            };
        }
        if let Some(c) = self.concurrency {
            cfg.runner.concurrency = c;
        }
        if let Some(q) = self.queue_latency {
            cfg.runner.queue_latency = q;
        }
        if let Some(a) = &self.coordinator {
            cfg.runner.listen_address = Some(a.clone());
        }
        if let Some(h) = self.heartbeat_interval {
            cfg.runner.heartbeat_interval = h;
        }
        if let Some(g) = self.worker_grace {
            cfg.runner.worker_grace = g;
        }
        if let Some(t) = self.task_timeout {
            cfg.runner.task_timeout = t;
        }
        if let Some(s) = self.strategy {
            cfg.optimizer.strategy = match s {
                StrategyArg::Mobo => Strategy::Mobo,
                StrategyArg::Mogo => Strategy::Mogo,
            };
        }
        if let Some(b) = self.batch_size {
            cfg.optimizer.batch_size = b;
        }
        if let Some(m) = self.max_trials {
            cfg.optimizer.max_trials = m;
        }
        if let Some(s) = self.seed {
            cfg.optimizer.rng_seed = s;
        }
        if let Some(m) = self.generation_mode {
            cfg.optimizer.generation_mode = match m {
                ModeArg::Synchronous => GenerationMode::Synchronous,
                ModeArg::Asynchronous => GenerationMode::Asynchronous,
            };
        }
    }
}

fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    flag
}

fn batch_command(timeout: f64) -> Option<BatchCommand> {
    let program = std::env::current_exe().ok()?;
    Some(BatchCommand { program, args: vec!["exec-task".into(), "--timeout".into(), timeout.to_string()] })
}

fn cmd_run(config: &Path, resume: bool, overrides: &Overrides, force_distributed: bool) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    overrides.apply(&mut cfg);
    if force_distributed {
        cfg.runner.kind = RunnerKind::Distributed;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let opts = DriverOptions {
        resume,
        batch_command: batch_command(cfg.runner.task_timeout),
        control: RunControl { interrupt: Some(interrupt_flag()), stop_after: None },
        on_listen: Some(Box::new(|addr| eprintln!("coordinator listening on {addr}"))),
    };
    match run_experiment(cfg, opts) {
        Ok(s) => {
            debug_assert_eq!(s.outcome, RunOutcome::Completed);
            print!("{}", summary_text(&s.report));
            ExitCode::SUCCESS
        }
        Err(DriverError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(DriverError::Interrupted) => {
            eprintln!("interrupted; continue with --resume");
            ExitCode::from(EXIT_INTERRUPTED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn cmd_worker(
    coordinator: &str,
    slots: usize,
    worker_id: Option<String>,
    task_timeout: f64,
    register_timeout: Option<f64>,
) -> ExitCode {
    if slots < 1 || !(task_timeout > 0.0) {
        eprintln!("error: --slots must be at least 1 and --task-timeout positive");
        return ExitCode::from(EXIT_CONFIG);
    }
    let mut cfg = WorkerConfig::new(coordinator, slots);
    if let Some(id) = worker_id {
        cfg.worker_id = id;
    }
    cfg.task_timeout = Duration::from_secs_f64(task_timeout);
    cfg.register_deadline = register_timeout.map(Duration::from_secs_f64);
    match run_worker(cfg, Registry::builtin(), interrupt_flag()) {
        Ok(exit) => {
            log::info!("worker finished: {exit:?}");
            ExitCode::SUCCESS
        }
        Err(WorkerError::Refused(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn cmd_report(journal: &Path, out: Option<PathBuf>) -> ExitCode {
    if !journal.exists() {
        eprintln!("error: journal {} does not exist", journal.display());
        return ExitCode::from(EXIT_FAILURE);
    }
    let dir = match out {
        Some(d) => d,
        None => {
            let from_journal = read_journal(journal).ok().and_then(|c| {
                c.events
                    .iter()
                    .find(|e| e.kind == EventKind::ExperimentStarted)
                    .and_then(|e| e.payload.get("config")?.get("report_dir")?.as_str().map(PathBuf::from))
            });
            from_journal.unwrap_or_else(|| journal.parent().map(Path::to_path_buf).unwrap_or_default())
        }
    };
    match write_report(journal, &dir) {
        Ok(r) => {
            print!("{}", summary_text(&r));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OPTIFAB_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, resume, overrides } => cmd_run(&config, resume, &overrides, false),
        Cmd::Coordinator { config, resume, overrides } => cmd_run(&config, resume, &overrides, true),
        Cmd::Worker { coordinator, slots, worker_id, task_timeout, register_timeout } => {
            cmd_worker(&coordinator, slots, worker_id, task_timeout, register_timeout)
        }
        Cmd::Report { journal, out } => cmd_report(&journal, out),
        Cmd::Closure { suite, out, serial_baseline } => {
            let ok = match suite {
                Suite::One => closure::suite_one(&out),
                Suite::Two => closure::suite_two(&out, serial_baseline),
            };
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
        Cmd::ExecTask { timeout } => {
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            match exec_task_main(&Registry::builtin(), Duration::from_secs_f64(timeout), stdin, stdout) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    error!("exec-task: {e}");
                    ExitCode::from(EXIT_FAILURE)
                }
            }
        }
    }
}
