//! Deterministic completions from a script, and a recorder that produces such
//! scripts from any other backend.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{CompletionBackend, CompletionRequest, GatewayError};

/// One canned completion. Without `call_index` the entry answers every call
/// with that fingerprint that has no index-specific entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_index: Option<usize>,
    pub text: String,
}

impl ScriptEntry {
    pub fn any(fingerprint: &str, text: &str) -> Self {
        Self {
            fingerprint: fingerprint.to_string(),
            call_index: None,
            text: text.to_string(),
        }
    }

    pub fn at(fingerprint: &str, call_index: usize, text: &str) -> Self {
        Self {
            fingerprint: fingerprint.to_string(),
            call_index: Some(call_index),
            text: text.to_string(),
        }
    }
}

pub struct ScriptedBackend {
    entries: HashMap<(String, Option<usize>), String>,
    calls: Mutex<HashMap<String, usize>>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|e| ((e.fingerprint, e.call_index), e.text))
                .collect(),
            calls: Mutex::new(HashMap::new()),
        }
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let fingerprint = request.fingerprint();
        let call_index = {
            let mut calls = self.calls.lock().expect("script call counter");
            let counter = calls.entry(fingerprint.clone()).or_insert(0);
            *counter += 1;
            *counter - 1
        };
        self.entries
            .get(&(fingerprint.clone(), Some(call_index)))
            .or_else(|| self.entries.get(&(fingerprint.clone(), None)))
            .cloned()
            .ok_or(GatewayError::ScriptMiss {
                fingerprint,
                call_index,
            })
    }
}

/// Wraps a backend and records every successful completion.
pub struct RecordingBackend {
    inner: Arc<dyn CompletionBackend>,
    log: Mutex<BTreeMap<String, Vec<String>>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn CompletionBackend>) -> Self {
        Self {
            inner,
            log: Mutex::new(BTreeMap::new()),
        }
    }

    /// Script entries reproducing the recorded calls. A fingerprint whose
    /// completions were all identical gets one index-free entry, so replay
    /// does not depend on the order concurrent callers arrive in.
    pub fn entries(&self) -> Vec<ScriptEntry> {
        let log = self.log.lock().expect("recording log");
        let mut entries = Vec::new();
        for (fingerprint, texts) in log.iter() {
            if texts.iter().all(|t| t == &texts[0]) {
                entries.push(ScriptEntry::any(fingerprint, &texts[0]));
            } else {
                for (i, text) in texts.iter().enumerate() {
                    entries.push(ScriptEntry::at(fingerprint, i, text));
                }
            }
        }
        entries
    }
}

impl CompletionBackend for RecordingBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let text = self.inner.complete(request)?;
        self.log
            .lock()
            .expect("recording log")
            .entry(request.fingerprint())
            .or_default()
            .push(text.clone());
        Ok(text)
    }
}
