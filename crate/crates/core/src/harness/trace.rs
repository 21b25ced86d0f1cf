//! Line-delimited trace events. One file per task; every line is one JSON
//! object with a `ts` (UTC milliseconds) and an `event` tag.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::SamplingProfile;
use crate::sandbox::ExecutionOutcome;
use crate::task::TaskSpec;
use crate::tree::{NodeId, NodeStatus};
use crate::voting::VoteResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "tree_of_code")]
    Tree,
    #[serde(rename = "codeact_baseline")]
    Baseline,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Tree => "tree_of_code",
            Mode::Baseline => "codeact_baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub final_answer: Option<String>,
    pub correct: bool,
    pub turns: usize,
    pub nodes_created: usize,
    pub llm_generations: usize,
    /// Set when an infrastructure failure cut the task short.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    TaskStart {
        task: TaskSpec,
        mode: Mode,
        max_depth: usize,
        branching: usize,
        judge_enabled: bool,
    },
    NodeCreated {
        node_id: NodeId,
        parent: NodeId,
        depth: usize,
        profile: SamplingProfile,
    },
    Generation {
        node_id: NodeId,
        prompt_fingerprint: String,
        approx_tokens: usize,
        completion: String,
    },
    Execution {
        node_id: NodeId,
        thought: String,
        action_code: String,
        outcome: ExecutionOutcome,
        status: NodeStatus,
    },
    LayerDone {
        depth: usize,
    },
    Vote {
        vote: VoteResult,
        judge_called: bool,
        /// Successful nodes whose answer won.
        accepted: Vec<NodeId>,
        /// Successful nodes outvoted.
        discarded: Vec<NodeId>,
    },
    TaskEnd {
        result: TaskResult,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub ts: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Append-only event log, optionally streamed to a file as it grows.
#[derive(Default)]
pub struct Trace {
    records: Vec<TraceRecord>,
    sink: Option<BufWriter<File>>,
    sink_error: Option<std::io::Error>,
}

impl Trace {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            sink: Some(BufWriter::new(File::create(path)?)),
            ..Self::default()
        })
    }

    pub fn push(&mut self, event: TraceEvent) {
        let record = TraceRecord { ts: now_ms(), event };
        if let Some(sink) = self.sink.as_mut() {
            let line = serde_json::to_string(&record).expect("trace record serializes");
            if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                self.sink_error.get_or_insert(e);
            }
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn events(&self) -> impl Iterator<Item = &TraceEvent> {
        self.records.iter().map(|r| &r.event)
    }

    /// First write error, if streaming to a file failed at any point.
    pub fn take_sink_error(&mut self) -> Option<std::io::Error> {
        self.sink_error.take()
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
            line: index + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// JSON lines with the timing fields (`ts`, `wall_ms`) removed, for
/// comparing runs.
pub fn strip_timing(records: &[TraceRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| {
            let mut event = r.event.clone();
            if let TraceEvent::Execution { outcome, .. } = &mut event {
                outcome.wall_ms = 0;
            }
            serde_json::to_string(&event).expect("trace event serializes")
        })
        .collect()
}
