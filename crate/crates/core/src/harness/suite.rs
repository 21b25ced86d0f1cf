use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::TaskSpec;
use crate::tree::ToCConfig;

use super::engine::Engine;
use super::trace::{Mode, TaskResult, Trace};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACES_DIR: &str = "traces";

/// Aggregate over one suite run. Contains no timing data, so two runs on the
/// same script serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub mode: Mode,
    pub task_count: usize,
    pub correct_count: usize,
    pub avg_turns: f64,
    pub correct_pct: f64,
    pub results: Vec<TaskResult>,
}

impl SuiteSummary {
    pub fn from_results(mode: Mode, results: Vec<TaskResult>) -> Self {
        let task_count = results.len();
        let correct_count = results.iter().filter(|r| r.correct).count();
        let turns: usize = results.iter().map(|r| r.turns).sum();
        let (avg_turns, correct_pct) = if task_count == 0 {
            (0.0, 0.0)
        } else {
            (
                turns as f64 / task_count as f64,
                100.0 * correct_count as f64 / task_count as f64,
            )
        };
        Self {
            mode,
            task_count,
            correct_count,
            avg_turns,
            correct_pct,
            results,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("summary serializes");
        text.push('\n');
        text
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("the suite has no tasks")]
    Empty,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SuiteError + '_ {
    move |source| SuiteError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// File-name-safe form of a task id.
pub fn trace_file_name(task_id: &str) -> String {
    let safe: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    format!("{safe}.jsonl")
}

/// Runs tasks in order. With `out`, each task's trace streams to
/// `out/traces/<task_id>.jsonl` and the summary lands in `out/summary.json`.
pub fn run_suite(
    engine: &Engine<'_>,
    tasks: &[TaskSpec],
    config: &ToCConfig,
    mode: Mode,
    out: Option<&Path>,
) -> Result<SuiteSummary, SuiteError> {
    if tasks.is_empty() {
        return Err(SuiteError::Empty);
    }
    let traces_dir = out.map(|o| o.join(TRACES_DIR));
    if let Some(dir) = &traces_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut results = Vec::with_capacity(tasks.len());
    for task in tasks {
        let mut trace = match &traces_dir {
            Some(dir) => {
                let path = dir.join(trace_file_name(&task.task_id));
                Trace::to_file(&path).map_err(io_err(&path))?
            }
            None => Trace::in_memory(),
        };
        let result = engine.run(mode, task, config, &mut trace);
        if let Some(e) = trace.take_sink_error() {
            tracing::error!(task = %task.task_id, error = %e, "trace file incomplete");
        }
        tracing::info!(task = %task.task_id, turns = result.turns, correct = result.correct, "task done");
        results.push(result);
    }
    let summary = SuiteSummary::from_results(mode, results);
    if let Some(out) = out {
        let path = out.join(SUMMARY_FILE);
        fs::write(&path, summary.to_json()).map_err(io_err(&path))?;
    }
    Ok(summary)
}
