//! Scripted runner that speaks the wire protocol without evaluating anything.
//!
//! Each code string's behavior is looked up by its fingerprint. The same
//! serve loop backs the in-process [`FakeRunnerFactory`] (channels) and the
//! `toc-fake-runner` binary (stdio).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::protocol::{HostMessage, ResultStatus, RunnerMessage, PROTOCOL_VERSION};
use super::{await_ready, Recv, RunnerFactory, RunnerHandle, SpawnError, NO_ANSWER};
use crate::fingerprint::code_fingerprint;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Submit {
    Literal(String),
    LastLlmReply,
}

/// What the fake runner does for one code string, in order: optional raw
/// reply, crash, llm calls, hang, raise, submit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FakeBehavior {
    #[serde(skip_serializing_if = "String::is_empty")]
    pub stdout: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub llm_prompts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub submit: Option<Submit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raise: Option<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub hang: bool,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub crash: bool,
    /// Sent verbatim instead of a result; `$EXEC` expands to the exec id.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_reply: Option<String>,
}

impl FakeBehavior {
    pub fn answer(answer: &str) -> Self {
        Self {
            submit: Some(Submit::Literal(answer.to_string())),
            ..Self::default()
        }
    }

    pub fn raise(trace: &str) -> Self {
        Self {
            raise: Some(trace.to_string()),
            ..Self::default()
        }
    }
}

/// Behaviors keyed by code fingerprint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FakeScript {
    pub entries: BTreeMap<String, FakeBehavior>,
}

impl FakeScript {
    pub fn insert(&mut self, code: &str, behavior: FakeBehavior) {
        self.entries.insert(code_fingerprint(code), behavior);
    }

    pub fn lookup(&self, code: &str) -> Option<&FakeBehavior> {
        self.entries.get(&code_fingerprint(code))
    }

    pub fn extend(&mut self, other: FakeScript) {
        self.entries.extend(other.entries);
    }
}

/// Where the fake runner looks up what to do for a code string.
pub trait BehaviorSource: Send + Sync {
    fn behavior(&self, code: &str) -> Option<FakeBehavior>;
}

impl BehaviorSource for FakeScript {
    fn behavior(&self, code: &str) -> Option<FakeBehavior> {
        self.lookup(code).cloned()
    }
}

impl<F> BehaviorSource for F
where
    F: Fn(&str) -> Option<FakeBehavior> + Send + Sync,
{
    fn behavior(&self, code: &str) -> Option<FakeBehavior> {
        self(code)
    }
}

/// Runner side of a transport.
pub trait Wire {
    /// Next inbound line; `None` once the host hung up.
    fn read(&mut self) -> Option<String>;
    /// `false` if the host is gone.
    fn write(&mut self, line: &str) -> bool;
    fn killed(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeEnd {
    Shutdown,
    HostGone,
    Crash,
    Malformed,
}

fn result_line(exec_id: &str, status: ResultStatus, answer: Option<String>, stdout: String, error: Option<String>) -> String {
    RunnerMessage::Result {
        exec_id: exec_id.to_string(),
        status,
        answer,
        stdout,
        error,
    }
    .to_line()
}

fn cap(stdout: &str, max: usize) -> String {
    if stdout.len() <= max {
        return stdout.to_string();
    }
    crate::text::keep_head(stdout, max)
}

/// Serves exec requests until shutdown, hang-up, crash or a malformed line.
pub fn serve(script: &dyn BehaviorSource, wire: &mut dyn Wire) -> ServeEnd {
    if !wire.write(&RunnerMessage::Ready { protocol: PROTOCOL_VERSION }.to_line()) {
        return ServeEnd::HostGone;
    }
    loop {
        let Some(line) = wire.read() else {
            return ServeEnd::HostGone;
        };
        let message: HostMessage = match serde_json::from_str(&line) {
            Ok(m) => m,
            Err(e) => {
                wire.write(&result_line(
                    "",
                    ResultStatus::Error,
                    None,
                    String::new(),
                    Some(format!("malformed message: {e}")),
                ));
                return ServeEnd::Malformed;
            }
        };
        let (exec_id, code, limits) = match message {
            HostMessage::Shutdown => return ServeEnd::Shutdown,
            HostMessage::LlmResult { .. } => {
                wire.write(&result_line(
                    "",
                    ResultStatus::Error,
                    None,
                    String::new(),
                    Some("llm_result received with no llm_call outstanding".into()),
                ));
                return ServeEnd::Malformed;
            }
            HostMessage::Exec { exec_id, code, limits, .. } => (exec_id, code, limits),
        };

        let Some(behavior) = script.behavior(&code) else {
            let reply = result_line(
                &exec_id,
                ResultStatus::Error,
                None,
                String::new(),
                Some(format!(
                    "NameError: fake runner has no script for code fingerprint {}",
                    code_fingerprint(&code)
                )),
            );
            if !wire.write(&reply) {
                return ServeEnd::HostGone;
            }
            continue;
        };

        if let Some(raw) = &behavior.raw_reply {
            if !wire.write(&raw.replace("$EXEC", &exec_id)) {
                return ServeEnd::HostGone;
            }
            continue;
        }
        if behavior.crash {
            return ServeEnd::Crash;
        }

        let stdout = cap(&behavior.stdout, limits.max_output_bytes);
        let mut last_reply: Option<String> = None;
        let mut llm_failure: Option<String> = None;
        for (i, prompt) in behavior.llm_prompts.iter().enumerate() {
            let call_id = format!("c{}", i + 1);
            let call = RunnerMessage::LlmCall {
                call_id: call_id.clone(),
                prompt: prompt.clone(),
            };
            if !wire.write(&call.to_line()) {
                return ServeEnd::HostGone;
            }
            let Some(reply) = wire.read() else {
                return ServeEnd::HostGone;
            };
            match serde_json::from_str::<HostMessage>(&reply) {
                Ok(HostMessage::LlmResult { call_id: got, text, error }) if got == call_id => match error {
                    Some(err) => {
                        llm_failure = Some(err);
                        break;
                    }
                    None => last_reply = Some(text),
                },
                Ok(HostMessage::Shutdown) => return ServeEnd::Shutdown,
                _ => {
                    wire.write(&result_line(
                        &exec_id,
                        ResultStatus::Error,
                        None,
                        stdout,
                        Some(format!("unexpected reply to {call_id}: {reply}")),
                    ));
                    return ServeEnd::Malformed;
                }
            }
        }

        let reply = if let Some(err) = llm_failure {
            result_line(
                &exec_id,
                ResultStatus::Error,
                None,
                stdout,
                Some(format!(
                    "Traceback (most recent call last):\n  File \"<action>\", in <module>\n    llm_function(...)\nLLMFunctionError: {err}"
                )),
            )
        } else if behavior.hang {
            while !wire.killed() {
                std::thread::sleep(Duration::from_millis(2));
            }
            return ServeEnd::HostGone;
        } else if let Some(trace) = &behavior.raise {
            result_line(&exec_id, ResultStatus::Error, None, stdout, Some(trace.clone()))
        } else {
            let answer = match &behavior.submit {
                Some(Submit::Literal(a)) => Some(a.clone()),
                Some(Submit::LastLlmReply) => last_reply,
                None => None,
            };
            match answer {
                Some(a) => result_line(&exec_id, ResultStatus::Ok, Some(a), stdout, None),
                None => result_line(&exec_id, ResultStatus::Error, None, stdout, Some(NO_ANSWER.into())),
            }
        };
        if !wire.write(&reply) {
            return ServeEnd::HostGone;
        }
    }
}

struct ChannelWire {
    rx: Receiver<String>,
    tx: Sender<String>,
    kill: Arc<AtomicBool>,
}

impl Wire for ChannelWire {
    fn read(&mut self) -> Option<String> {
        // Poll so that a kill also releases a runner blocked on input.
        loop {
            if self.killed() {
                return None;
            }
            match self.rx.recv_timeout(Duration::from_millis(20)) {
                Ok(line) => return Some(line),
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => return None,
            }
        }
    }

    fn write(&mut self, line: &str) -> bool {
        self.tx.send(line.to_string()).is_ok()
    }

    fn killed(&self) -> bool {
        self.kill.load(Ordering::Relaxed)
    }
}

/// Runner over stdin/stdout, used by the `toc-fake-runner` binary.
pub struct StdioWire<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> StdioWire<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }
}

impl<R: BufRead, W: Write> Wire for StdioWire<R, W> {
    fn read(&mut self) -> Option<String> {
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(line.trim_end_matches(['\n', '\r']).to_string()),
        }
    }

    fn write(&mut self, line: &str) -> bool {
        writeln!(self.output, "{line}").is_ok() && self.output.flush().is_ok()
    }
}

/// Host end of an in-process fake runner thread.
pub struct FakeRunnerHandle {
    tx: Option<Sender<String>>,
    rx: Receiver<String>,
    kill: Arc<AtomicBool>,
    thread: Option<JoinHandle<ServeEnd>>,
}

impl RunnerHandle for FakeRunnerHandle {
    fn send_line(&mut self, line: &str) -> std::io::Result<()> {
        let broken = || std::io::Error::new(std::io::ErrorKind::BrokenPipe, "fake runner is gone");
        self.tx
            .as_ref()
            .ok_or_else(broken)?
            .send(line.to_string())
            .map_err(|_| broken())
    }

    fn recv_line(&mut self, timeout: Duration) -> Recv {
        match self.rx.recv_timeout(timeout) {
            Ok(line) => Recv::Line(line),
            Err(RecvTimeoutError::Timeout) => Recv::Timeout,
            Err(RecvTimeoutError::Disconnected) => Recv::Closed,
        }
    }

    fn terminate(&mut self) {
        self.kill.store(true, Ordering::Relaxed);
        self.tx = None;
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.tx.take() {
            let _ = tx.send(HostMessage::Shutdown.to_line());
        }
        self.terminate();
    }
}

impl Drop for FakeRunnerHandle {
    fn drop(&mut self) {
        self.terminate();
    }
}

#[derive(Clone)]
pub struct FakeRunnerFactory {
    script: Arc<dyn BehaviorSource>,
}

impl FakeRunnerFactory {
    pub fn new(script: FakeScript) -> Self {
        Self {
            script: Arc::new(script),
        }
    }

    /// Behaviors decided per code string at exec time.
    pub fn from_source(source: Arc<dyn BehaviorSource>) -> Self {
        Self { script: source }
    }
}

impl RunnerFactory for FakeRunnerFactory {
    fn spawn(&self) -> Result<Box<dyn RunnerHandle>, SpawnError> {
        let (host_tx, runner_rx) = mpsc::channel();
        let (runner_tx, host_rx) = mpsc::channel();
        let kill = Arc::new(AtomicBool::new(false));
        let script = Arc::clone(&self.script);
        let mut wire = ChannelWire {
            rx: runner_rx,
            tx: runner_tx,
            kill: Arc::clone(&kill),
        };
        let thread = std::thread::Builder::new()
            .name("fake-runner".into())
            .spawn(move || serve(script.as_ref(), &mut wire))
            .map_err(|source| SpawnError::Launch {
                program: "fake-runner thread".into(),
                source,
                hint: "the host is out of threads".into(),
            })?;
        let mut handle = FakeRunnerHandle {
            tx: Some(host_tx),
            rx: host_rx,
            kill,
            thread: Some(thread),
        };
        await_ready(&mut handle, Duration::from_secs(5))?;
        Ok(Box::new(handle))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boots_with_ready_and_shuts_down_twice() {
        let factory = FakeRunnerFactory::new(FakeScript::default());
        let mut handle = factory.spawn().unwrap();
        handle.shutdown();
        handle.shutdown();
        assert!(handle.send_line("{}").is_err());
    }

    #[test]
    fn stdio_serve_loop() {
        let mut script = FakeScript::default();
        script.insert("submit_answer('4')", FakeBehavior::answer("4"));
        let exec = HostMessage::Exec {
            exec_id: "e1".into(),
            code: "submit_answer('4')".into(),
            tool_pack: "basic".into(),
            task_args: BTreeMap::new(),
            limits: Default::default(),
        };
        let input = format!("{}\n{}\n", exec.to_line(), HostMessage::Shutdown.to_line());
        let mut out = Vec::new();
        let end = serve(&script, &mut StdioWire::new(input.as_bytes(), &mut out));
        assert_eq!(end, ServeEnd::Shutdown);
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines[0], r#"{"type":"ready","protocol":1}"#);
        assert_eq!(
            lines[1],
            r#"{"type":"result","exec_id":"e1","status":"ok","answer":"4","stdout":"","error":null}"#
        );
    }

    #[test]
    fn garbage_inbound_line_ends_serving() {
        let mut out = Vec::new();
        let end = serve(&FakeScript::default(), &mut StdioWire::new("garbage\n".as_bytes(), &mut out));
        assert_eq!(end, ServeEnd::Malformed);
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().nth(1).unwrap().contains(r#""status":"error""#));
    }

    #[test]
    fn behavior_serialization_is_compact() {
        let json = serde_json::to_string(&FakeBehavior::answer("A")).unwrap();
        assert_eq!(json, r#"{"submit":{"literal":"A"}}"#);
    }
}
