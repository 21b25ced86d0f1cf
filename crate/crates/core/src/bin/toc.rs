use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use toc_core::codegen::PromptBuilder;
use toc_core::gateway::Gateway;
use toc_core::harness::config::FileConfig;
use toc_core::harness::{self, Engine, Mode};
use toc_core::mock::MockScript;
use toc_core::sandbox::process::ProcessRunnerFactory;
use toc_core::sandbox::RunnerFactory;
use toc_core::task::load_task_suite;

const EXIT_USAGE: u8 = 1;
const EXIT_INFRA: u8 = 2;

#[derive(Parser)]
#[command(name = "toc", version, about = "Tree-structured code-action agent runner")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Tree,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// Run a task suite and write traces plus a summary.
    Run {
        #[arg(long)]
        suite: PathBuf,
        /// TOML config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tree")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        /// Serve completions and executions from a mock script instead of
        /// real providers and the Python runner.
        #[arg(long)]
        mock_script: Option<PathBuf>,
    },
    /// Print the metrics table for every summary under a directory.
    Report {
        #[arg(long)]
        traces: PathBuf,
    },
    /// Re-derive vote and correctness from trace files.
    Replay {
        /// A trace file, or a directory of them.
        #[arg(long)]
        trace: PathBuf,
    },
}

struct Failure(u8, String);

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure(EXIT_USAGE, message.to_string())
}

fn infra(message: impl std::fmt::Display) -> Failure {
    Failure(EXIT_INFRA, message.to_string())
}

fn run(suite: &Path, config: Option<&Path>, mode: ModeArg, out: &Path, mock: Option<&Path>) -> Result<(), Failure> {
    let tasks = load_task_suite(suite).map_err(usage)?;
    let config = match config {
        Some(path) => FileConfig::load(path).map_err(usage)?,
        None => FileConfig::default(),
    };
    let (gateway, runners): (Gateway, Box<dyn RunnerFactory>) = match mock {
        Some(path) => {
            let script = MockScript::load(path).map_err(usage)?;
            (script.gateway(&config.tree.models), Box::new(script.runners()))
        }
        None => (
            config.live_gateway().map_err(usage)?,
            Box::new(ProcessRunnerFactory::new(config.runner.clone())),
        ),
    };
    let prompts = PromptBuilder::default();
    let engine = Engine {
        gateway: &gateway,
        runners: runners.as_ref(),
        prompts: &prompts,
        limits: config.limits,
    };
    let mode = match mode {
        ModeArg::Tree => Mode::Tree,
        ModeArg::Baseline => Mode::Baseline,
    };
    let summary = harness::run_suite(&engine, &tasks, &config.tree, mode, Some(out)).map_err(|e| match e {
        harness::SuiteError::Empty => usage(e),
        other => infra(other),
    })?;
    print!(
        "{}",
        harness::format_table(&[harness::ReportRow {
            mode,
            avg_turns: summary.avg_turns,
            correct_pct: summary.correct_pct,
        }])
    );
    let aborted: Vec<&str> = summary
        .results
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.task_id.as_str())
        .collect();
    if !aborted.is_empty() {
        for r in summary.results.iter().filter(|r| r.error.is_some()) {
            eprintln!("{}: {}", r.task_id, r.error.as_deref().unwrap_or_default());
        }
        return Err(infra(format!("{} task(s) aborted: {}", aborted.len(), aborted.join(", "))));
    }
    Ok(())
}

fn replay(target: &Path) -> Result<(), Failure> {
    let files = if target.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(target)
            .map_err(|e| usage(format!("{}: {e}", target.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        files
    } else {
        vec![target.to_path_buf()]
    };
    if files.is_empty() {
        return Err(usage(format!("no .jsonl traces in {}", target.display())));
    }
    let mut diverged = 0;
    for file in &files {
        let report = harness::replay(file).map_err(|e| usage(format!("{}: {e}", file.display())))?;
        if report.verified() {
            println!("{}: verified", report.task_id);
        } else {
            diverged += 1;
            println!("{}: DIVERGED", report.task_id);
            for d in &report.divergences {
                println!("  - {d}");
            }
        }
    }
    if diverged > 0 {
        return Err(usage(format!("{diverged} of {} trace(s) diverged", files.len())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();

    let outcome = match &cli.command {
        Command::Run {
            suite,
            config,
            mode,
            out,
            mock_script,
        } => run(suite, config.as_deref(), *mode, out, mock_script.as_deref()),
        Command::Report { traces } => harness::report(traces).map(|t| print!("{t}")).map_err(usage),
        Command::Replay { trace } => replay(trace),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, message)) => {
            eprintln!("toc: {message}");
            ExitCode::from(code)
        }
    }
}
