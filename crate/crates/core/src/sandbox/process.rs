//! Runner as a child process speaking the protocol over its stdio.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::HostMessage;
use super::{await_ready, Recv, RunnerFactory, RunnerHandle, SpawnError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessRunnerConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    #[serde(default = "default_ready_timeout_ms")]
    pub ready_timeout_ms: u64,
    #[serde(default = "default_grace_ms")]
    pub shutdown_grace_ms: u64,
}

fn default_ready_timeout_ms() -> u64 {
    10_000
}

fn default_grace_ms() -> u64 {
    500
}

impl Default for ProcessRunnerConfig {
    fn default() -> Self {
        Self {
            command: vec!["python3".into(), "-m".into(), "toc_runner".into()],
            ready_timeout_ms: default_ready_timeout_ms(),
            shutdown_grace_ms: default_grace_ms(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProcessRunnerFactory {
    config: ProcessRunnerConfig,
}

impl ProcessRunnerFactory {
    pub fn new(config: ProcessRunnerConfig) -> Self {
        Self { config }
    }
}

impl RunnerFactory for ProcessRunnerFactory {
    fn spawn(&self) -> Result<Box<dyn RunnerHandle>, SpawnError> {
        let (program, args) = self.config.command.split_first().ok_or_else(|| SpawnError::Launch {
            program: String::new(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
            hint: "set [runner] command in the config file".into(),
        })?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| SpawnError::Launch {
                program: program.clone(),
                hint: if source.kind() == std::io::ErrorKind::NotFound {
                    format!("install {program} or point [runner] command at the runner executable")
                } else {
                    "check the runner command and its permissions".into()
                },
                source,
            })?;

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        // Runner stderr is diagnostics only.
        if let Some(stderr) = child.stderr.take() {
            std::thread::spawn(move || {
                for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                    tracing::debug!(target: "toc::runner", "{line}");
                }
            });
        }

        let stdin = child.stdin.take();
        let mut handle = ProcessRunnerHandle {
            child: Some(child),
            stdin,
            rx,
            grace: Duration::from_millis(self.config.shutdown_grace_ms),
        };
        await_ready(&mut handle, Duration::from_millis(self.config.ready_timeout_ms))?;
        Ok(Box::new(handle))
    }
}

pub struct ProcessRunnerHandle {
    child: Option<Child>,
    stdin: Option<ChildStdin>,
    rx: Receiver<String>,
    grace: Duration,
}

impl ProcessRunnerHandle {
    fn reap(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl RunnerHandle for ProcessRunnerHandle {
    fn send_line(&mut self, line: &str) -> std::io::Result<()> {
        let stdin = self.stdin.as_mut().ok_or_else(|| {
            std::io::Error::new(std::io::ErrorKind::BrokenPipe, "runner stdin closed")
        })?;
        stdin.write_all(line.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()
    }

    fn recv_line(&mut self, timeout: Duration) -> Recv {
        match self.rx.recv_timeout(timeout) {
            Ok(line) => Recv::Line(line),
            Err(RecvTimeoutError::Timeout) => Recv::Timeout,
            Err(RecvTimeoutError::Disconnected) => Recv::Closed,
        }
    }

    fn terminate(&mut self) {
        self.stdin = None;
        self.reap();
    }

    fn shutdown(&mut self) {
        if self.child.is_none() {
            return;
        }
        let _ = self.send_line(&HostMessage::Shutdown.to_line());
        self.stdin = None;
        if let Some(child) = self.child.as_mut() {
            let deadline = Instant::now() + self.grace;
            while Instant::now() < deadline {
                match child.try_wait() {
                    Ok(Some(_)) | Err(_) => {
                        self.child = None;
                        return;
                    }
                    Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                }
            }
        }
        self.reap();
    }
}

impl Drop for ProcessRunnerHandle {
    fn drop(&mut self) {
        self.reap();
    }
}
