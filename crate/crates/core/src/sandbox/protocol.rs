//! Line-delimited JSON messages exchanged with a runner over its stdio.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ExecLimits;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HostMessage {
    Exec {
        exec_id: String,
        code: String,
        tool_pack: String,
        task_args: BTreeMap<String, Value>,
        limits: ExecLimits,
    },
    LlmResult {
        call_id: String,
        text: String,
        /// Set when the bridge refused or failed the call; the runner raises
        /// it inside the action code.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunnerMessage {
    Ready {
        protocol: u32,
    },
    LlmCall {
        call_id: String,
        prompt: String,
    },
    Result {
        exec_id: String,
        status: ResultStatus,
        answer: Option<String>,
        stdout: String,
        error: Option<String>,
    },
}

impl HostMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("host message serializes")
    }
}

impl RunnerMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("runner message serializes")
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}
