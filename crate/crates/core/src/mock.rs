//! Mock-script files: canned completions plus fake-runner behaviors, enough to
//! run a suite with no network and no interpreter.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::scripted::{ScriptEntry, ScriptedBackend};
use crate::gateway::Gateway;
use crate::sandbox::fake::{FakeRunnerFactory, FakeScript};

pub const MOCK_SCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    pub version: u32,
    pub completions: Vec<ScriptEntry>,
    pub executions: FakeScript,
}

#[derive(Debug, Error)]
pub enum MockScriptError {
    #[error("cannot read mock script {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("mock script: {0}")]
    Parse(String),
    #[error("mock script version {0} is not supported (expected {MOCK_SCRIPT_VERSION})")]
    Version(u32),
}

impl MockScript {
    pub fn new(completions: Vec<ScriptEntry>, executions: FakeScript) -> Self {
        Self {
            version: MOCK_SCRIPT_VERSION,
            completions,
            executions,
        }
    }

    pub fn parse(text: &str) -> Result<Self, MockScriptError> {
        let script: MockScript = serde_json::from_str(text).map_err(|e| MockScriptError::Parse(e.to_string()))?;
        if script.version != MOCK_SCRIPT_VERSION {
            return Err(MockScriptError::Version(script.version));
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, MockScriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| MockScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("mock script serializes");
        text.push('\n');
        text
    }

    /// Gateway answering `models` from the scripted completions.
    pub fn gateway(&self, models: &[String]) -> Gateway {
        Gateway::scripted(Arc::new(ScriptedBackend::new(self.completions.clone())), models)
    }

    pub fn runners(&self) -> FakeRunnerFactory {
        FakeRunnerFactory::new(self.executions.clone())
    }
}
