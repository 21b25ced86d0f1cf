//! Supervising action-code execution in a runner.
//!
//! The host never evaluates code. It sends one `exec` message, services the
//! runner's `llm_call` requests through a bridge, and maps the terminal
//! `result` (or a timeout, crash or protocol violation) to an
//! [`ExecutionOutcome`].

pub mod fake;
pub mod process;
pub mod protocol;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text;
use protocol::{HostMessage, ResultStatus, RunnerMessage, PROTOCOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
    ProtocolError,
}

impl ExecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Ok => "ok",
            ExecStatus::Error => "error",
            ExecStatus::Timeout => "timeout",
            ExecStatus::ProtocolError => "protocol_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    pub answer: Option<String>,
    pub stdout: String,
    pub error_trace: Option<String>,
    pub wall_ms: u64,
    pub llm_calls: u32,
}

impl ExecutionOutcome {
    fn new(status: ExecStatus, answer: Option<String>, stdout: String, error: Option<String>) -> Self {
        Self {
            status,
            answer,
            stdout,
            error_trace: error,
            wall_ms: 0,
            llm_calls: 0,
        }
    }

    pub fn ok(answer: &str, stdout: &str) -> Self {
        Self::new(ExecStatus::Ok, Some(answer.to_string()), stdout.to_string(), None)
    }

    pub fn error(trace: &str, stdout: &str) -> Self {
        Self::new(ExecStatus::Error, None, stdout.to_string(), Some(trace.to_string()))
    }

    pub fn timeout(wall_ms: u64) -> Self {
        let mut outcome = Self::new(
            ExecStatus::Timeout,
            None,
            String::new(),
            Some(format!("timeout: execution exceeded {wall_ms} ms and was terminated")),
        );
        outcome.wall_ms = wall_ms;
        outcome
    }

    pub fn protocol_error(message: impl Into<String>) -> Self {
        Self::new(ExecStatus::ProtocolError, None, String::new(), Some(message.into()))
    }

    /// Leading `kind:` token of the error trace, e.g. `no_code` or `no_answer`.
    pub fn error_kind(&self) -> Option<&str> {
        let trace = self.error_trace.as_deref()?;
        let head = trace.split([':', '\n']).next()?;
        (!head.is_empty() && !head.contains(' ')).then_some(head)
    }
}

pub const NO_ANSWER: &str = "no_answer";
pub const NO_CODE: &str = "no_code";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecLimits {
    pub wall_ms: u64,
    pub max_output_bytes: usize,
    pub max_llm_calls: u32,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            wall_ms: 20_000,
            max_output_bytes: 65_536,
            max_llm_calls: 5,
        }
    }
}

impl ExecLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.wall_ms == 0 || self.max_output_bytes == 0 || self.max_llm_calls == 0 {
            return Err(format!("execution limits must be strictly positive: {self:?}"));
        }
        Ok(())
    }
}

/// One line read from a runner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Recv {
    Line(String),
    Timeout,
    Closed,
}

/// Transport to one runner instance. At most one exec is in flight per handle;
/// [`execute`] takes it by `&mut`.
pub trait RunnerHandle: Send {
    fn send_line(&mut self, line: &str) -> std::io::Result<()>;
    fn recv_line(&mut self, timeout: Duration) -> Recv;
    /// Kill immediately.
    fn terminate(&mut self);
    /// Ask the runner to exit, killing it if it does not. Idempotent.
    fn shutdown(&mut self);
}

#[derive(Debug, Error)]
pub enum SpawnError {
    #[error("runner executable {program:?} could not be started: {source}. {hint}")]
    Launch {
        program: String,
        source: std::io::Error,
        hint: String,
    },
    #[error("runner did not send ready: {0}")]
    NotReady(String),
}

pub trait RunnerFactory: Send + Sync {
    /// Starts a runner and waits for its `ready` message.
    fn spawn(&self) -> Result<Box<dyn RunnerHandle>, SpawnError>;
}

/// Consumes the `ready` line every runner emits on boot.
pub fn await_ready(handle: &mut dyn RunnerHandle, timeout: Duration) -> Result<(), SpawnError> {
    match handle.recv_line(timeout) {
        Recv::Line(line) => match RunnerMessage::parse(&line) {
            Ok(RunnerMessage::Ready { protocol }) if protocol == PROTOCOL_VERSION => Ok(()),
            Ok(RunnerMessage::Ready { protocol }) => Err(SpawnError::NotReady(format!(
                "runner speaks protocol {protocol}, host speaks {PROTOCOL_VERSION}"
            ))),
            _ => Err(SpawnError::NotReady(format!("unexpected first line {}", quote(&line)))),
        },
        Recv::Timeout => Err(SpawnError::NotReady(format!("no ready message within {timeout:?}"))),
        Recv::Closed => Err(SpawnError::NotReady("runner exited during startup".into())),
    }
}

fn quote(line: &str) -> String {
    format!("{:?}", text::clip(line, 240))
}

/// Services an in-code `llm_function` call.
pub type LlmBridge<'a> = dyn Fn(&str) -> Result<String, String> + Sync + 'a;

static EXEC_SEQ: AtomicU64 = AtomicU64::new(1);

/// Runs `code` on `runner` under `limits`.
pub fn execute(
    runner: &mut dyn RunnerHandle,
    code: &str,
    tool_pack: &str,
    task_args: &BTreeMap<String, Value>,
    limits: &ExecLimits,
    llm_bridge: &LlmBridge<'_>,
) -> ExecutionOutcome {
    let start = Instant::now();
    let mut llm_calls = 0u32;
    let mut outcome = drive(runner, code, tool_pack, task_args, limits, llm_bridge, start, &mut llm_calls);
    outcome.wall_ms = start.elapsed().as_millis() as u64;
    outcome.llm_calls = llm_calls;
    outcome
}

#[allow(clippy::too_many_arguments)]
fn drive(
    runner: &mut dyn RunnerHandle,
    code: &str,
    tool_pack: &str,
    task_args: &BTreeMap<String, Value>,
    limits: &ExecLimits,
    llm_bridge: &LlmBridge<'_>,
    start: Instant,
    llm_calls: &mut u32,
) -> ExecutionOutcome {
    if code.trim().is_empty() {
        return ExecutionOutcome::error(&format!("{NO_CODE}: empty action code"), "");
    }
    let deadline = start + Duration::from_millis(limits.wall_ms);
    let exec_id = format!("x{}", EXEC_SEQ.fetch_add(1, Ordering::Relaxed));
    let exec = HostMessage::Exec {
        exec_id: exec_id.clone(),
        code: code.to_string(),
        tool_pack: tool_pack.to_string(),
        task_args: task_args.clone(),
        limits: *limits,
    };
    if let Err(e) = runner.send_line(&exec.to_line()) {
        return ExecutionOutcome::protocol_error(format!("could not send exec to runner: {e}"));
    }

    loop {
        let now = Instant::now();
        if now >= deadline {
            runner.terminate();
            return ExecutionOutcome::timeout(limits.wall_ms);
        }
        let line = match runner.recv_line(deadline - now) {
            Recv::Line(line) => line,
            Recv::Timeout => {
                runner.terminate();
                return ExecutionOutcome::timeout(limits.wall_ms);
            }
            Recv::Closed => {
                return ExecutionOutcome::protocol_error(
                    "runner exited before sending a result (crash or kill)",
                );
            }
        };
        let message = match RunnerMessage::parse(&line) {
            Ok(m) => m,
            Err(e) => {
                runner.terminate();
                return ExecutionOutcome::protocol_error(format!(
                    "malformed runner message {}: {e}",
                    quote(&line)
                ));
            }
        };
        match message {
            RunnerMessage::LlmCall { call_id, prompt } => {
                let reply = if *llm_calls >= limits.max_llm_calls {
                    HostMessage::LlmResult {
                        call_id,
                        text: String::new(),
                        error: Some(format!(
                            "llm_function call limit of {} exceeded",
                            limits.max_llm_calls
                        )),
                    }
                } else {
                    *llm_calls += 1;
                    match llm_bridge(&prompt) {
                        Ok(text) => HostMessage::LlmResult {
                            call_id,
                            text,
                            error: None,
                        },
                        Err(err) => HostMessage::LlmResult {
                            call_id,
                            text: String::new(),
                            error: Some(err),
                        },
                    }
                };
                if let Err(e) = runner.send_line(&reply.to_line()) {
                    return ExecutionOutcome::protocol_error(format!(
                        "could not send llm_result to runner: {e}"
                    ));
                }
            }
            RunnerMessage::Result {
                exec_id: got,
                status,
                answer,
                stdout,
                error,
            } => {
                if got != exec_id {
                    runner.terminate();
                    return ExecutionOutcome::protocol_error(format!(
                        "result for exec_id {got:?} while {exec_id:?} was in flight: {}",
                        quote(&line)
                    ));
                }
                return map_result(status, answer, stdout, error, limits, &line);
            }
            RunnerMessage::Ready { .. } => {
                runner.terminate();
                return ExecutionOutcome::protocol_error(format!(
                    "out-of-order message during exec: {}",
                    quote(&line)
                ));
            }
        }
    }
}

fn cap_stdout(stdout: String, max: usize) -> String {
    if stdout.len() <= max {
        stdout
    } else {
        text::keep_head(&stdout, max)
    }
}

fn map_result(
    status: ResultStatus,
    answer: Option<String>,
    stdout: String,
    error: Option<String>,
    limits: &ExecLimits,
    line: &str,
) -> ExecutionOutcome {
    let stdout = cap_stdout(stdout, limits.max_output_bytes);
    match (status, answer, error) {
        (ResultStatus::Ok, Some(answer), None) => ExecutionOutcome::new(ExecStatus::Ok, Some(answer), stdout, None),
        (ResultStatus::Ok, None, None) => {
            ExecutionOutcome::new(ExecStatus::Error, None, stdout, Some(NO_ANSWER.to_string()))
        }
        (ResultStatus::Error, None, error) => ExecutionOutcome::new(
            ExecStatus::Error,
            None,
            stdout,
            Some(error.unwrap_or_else(|| "error: runner reported failure without a trace".into())),
        ),
        (ResultStatus::Ok, _, Some(_)) => ExecutionOutcome::protocol_error(format!(
            "result has status ok but carries an error: {}",
            quote(line)
        )),
        (ResultStatus::Error, Some(_), _) => ExecutionOutcome::protocol_error(format!(
            "result carries an answer but status error: {}",
            quote(line)
        )),
    }
}

/// Renders an outcome as the father-result section of a child prompt,
/// within `budget` approximate tokens (4 bytes each). Deterministic: timing
/// fields are left out.
pub fn summarize_for_child(outcome: &ExecutionOutcome, budget: usize) -> String {
    let max_bytes = budget.saturating_mul(4);
    let mut out = format!("status: {}\n", outcome.status.as_str());
    if let Some(answer) = &outcome.answer {
        let room = max_bytes.saturating_sub(out.len() + 9) / 2;
        out.push_str(&format!("answer: {}\n", text::keep_head(answer, room)));
    }
    if outcome.llm_calls > 0 {
        out.push_str(&format!("llm_function calls: {}\n", outcome.llm_calls));
    }

    let error = outcome.error_trace.as_deref().unwrap_or("");
    let stdout = outcome.stdout.as_str();
    let labels = if error.is_empty() { 0 } else { 7 } + if stdout.is_empty() { 0 } else { 8 } + 2;
    let avail = max_bytes.saturating_sub(out.len() + labels);
    let (error_room, stdout_room) = match (error.is_empty(), stdout.is_empty()) {
        (true, true) => (0, 0),
        (false, true) => (avail, 0),
        (true, false) => (0, avail),
        (false, false) => {
            // Error trace gets at least three quarters, more if stdout is short.
            let stdout_need = stdout.len().min(avail);
            let error_room = error.len().min((avail / 4 * 3).max(avail - stdout_need));
            (error_room, avail - error_room)
        }
    };
    if !error.is_empty() {
        out.push_str("error:\n");
        out.push_str(&text::keep_tail(error, error_room));
        out.push('\n');
    }
    if !stdout.is_empty() && stdout_room > 0 {
        out.push_str("stdout:\n");
        out.push_str(&text::keep_tail(stdout, stdout_room));
        out.push('\n');
    }
    let trimmed = out.trim_end_matches('\n');
    text::clip(trimmed, max_bytes).to_string()
}
