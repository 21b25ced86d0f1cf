//! Scripted stand-in for the Python runner, speaking the same stdio protocol.

use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use toc_core::mock::MockScript;
use toc_core::sandbox::fake::{serve, FakeScript, ServeEnd, StdioWire};

#[derive(Parser)]
#[command(name = "toc-fake-runner", version)]
struct Args {
    /// Mock script, or a bare map of code fingerprint to behavior.
    #[arg(long)]
    script: Option<PathBuf>,
}

fn load(path: &PathBuf) -> Result<FakeScript, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Ok(mock) = MockScript::parse(&text) {
        return Ok(mock.executions);
    }
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let script = match &args.script {
        Some(path) => match load(path) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("toc-fake-runner: {e}");
                return ExitCode::from(1);
            }
        },
        None => FakeScript::default(),
    };
    let mut wire = StdioWire::new(BufReader::new(io::stdin().lock()), io::stdout().lock());
    match serve(&script, &mut wire) {
        ServeEnd::Shutdown | ServeEnd::HostGone => ExitCode::SUCCESS,
        ServeEnd::Crash => ExitCode::from(70),
        ServeEnd::Malformed => ExitCode::from(65),
    }
}
