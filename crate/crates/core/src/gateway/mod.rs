//! One completion interface over real providers and a scripted backend.
//!
//! Models are addressed as `provider:model-name`. The gateway resolves the
//! provider, enforces its concurrent-request cap and hands the request to
//! the provider's backend. Node generation, in-code `llm_function` calls and
//! judge ballots all go through [`Gateway::complete`].

pub mod http;
pub mod scripted;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::SamplingProfile;
use crate::fingerprint::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub profile: SamplingProfile,
    pub system_text: String,
    pub user_text: String,
    pub max_output_tokens: usize,
}

impl CompletionRequest {
    /// Hash of (model, temperature, prompt variant, user text). The system
    /// text is a function of the variant and is not hashed separately.
    pub fn fingerprint(&self) -> String {
        request_fingerprint(&self.profile, &self.user_text)
    }
}

pub fn request_fingerprint(profile: &SamplingProfile, user_text: &str) -> String {
    sha256_hex(&[
        &profile.model,
        &format!("{}", profile.temperature),
        &profile.prompt_variant,
        user_text,
    ])
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("provider {provider}: credential env var {env_var} is not set")]
    MissingCredential { provider: String, env_var: String },
    #[error("provider {provider}: gave up after {attempts} attempt(s): {last}")]
    RetriesExhausted {
        provider: String,
        attempts: u32,
        last: String,
    },
    #[error("provider {provider}: HTTP {status}: {body}")]
    Http {
        provider: String,
        status: u16,
        body: String,
    },
    #[error("provider {provider}: unexpected response: {message}")]
    BadResponse { provider: String, message: String },
    #[error("no scripted completion for fingerprint {fingerprint} (call #{call_index})")]
    ScriptMiss { fingerprint: String, call_index: usize },
    #[error("max_output_tokens must be >= 1")]
    InvalidRequest,
    #[error("judge reply has no usable option number: {0:?}")]
    Judge(String),
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

impl<F> CompletionBackend for F
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self(request)
    }
}

/// Counting semaphore for the per-provider request cap.
#[derive(Debug)]
pub struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self, wait: Option<Duration>) -> Option<Permit<'_>> {
        let deadline = wait.map(|w| Instant::now() + w);
        let mut permits = self.permits.lock().expect("limiter lock");
        while *permits == 0 {
            match deadline {
                None => permits = self.freed.wait(permits).expect("limiter lock"),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return None;
                    }
                    permits = self.freed.wait_timeout(permits, deadline - now).expect("limiter lock").0;
                }
            }
        }
        *permits -= 1;
        Some(Permit(self))
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("limiter lock") += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireShape {
    /// `POST {endpoint}/chat/completions`, bearer auth.
    OpenaiChat,
    /// `POST {endpoint}/messages`, `x-api-key` auth.
    AnthropicMessages,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    /// Routing prefix; taken from the section key in config files.
    #[serde(default)]
    pub name: String,
    pub shape: WireShape,
    pub endpoint: String,
    pub auth_env_var: String,
    pub model_names: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}
fn default_retry_base_ms() -> u64 {
    250
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.name.is_empty() || self.name.contains(':') {
            return Err(format!("provider name {:?} must be non-empty and contain no ':'", self.name));
        }
        let uri: ureq::http::Uri = self
            .endpoint
            .parse()
            .map_err(|e| format!("provider {}: endpoint {:?} is not a URL: {e}", self.name, self.endpoint))?;
        match uri.scheme_str() {
            Some("http") | Some("https") if uri.host().is_some() => {}
            _ => {
                return Err(format!(
                    "provider {}: endpoint {:?} must be an absolute http(s) URL",
                    self.name, self.endpoint
                ))
            }
        }
        if self.request_timeout_ms == 0 {
            return Err(format!("provider {}: request_timeout_ms must be > 0", self.name));
        }
        Ok(())
    }

    /// Upper bound on one `complete` call, retries included.
    pub fn call_budget(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms) * (self.max_retries + 1)
    }
}

struct Route {
    backend: Arc<dyn CompletionBackend>,
    /// Empty means any model name under this provider.
    models: Vec<String>,
    limiter: Arc<Limiter>,
    wait: Option<Duration>,
}

/// Routes requests to providers by the `provider:` prefix of the model id.
#[derive(Default)]
pub struct Gateway {
    providers: BTreeMap<String, Route>,
    exact: BTreeMap<String, Route>,
    judge_system: String,
}

const JUDGE_SYSTEM: &str = "You are a strict judge. Several programs answered the same question \
    independently and disagree. Choose the single most likely correct answer.";

impl Gateway {
    pub fn new() -> Self {
        Self {
            judge_system: JUDGE_SYSTEM.to_string(),
            ..Self::default()
        }
    }

    /// Serves exactly the listed model ids from `backend`.
    pub fn scripted(backend: Arc<dyn CompletionBackend>, models: &[String]) -> Self {
        let mut gateway = Self::new();
        let limiter = Arc::new(Limiter::new(usize::MAX / 2));
        for model in models {
            gateway.exact.insert(
                model.clone(),
                Route {
                    backend: Arc::clone(&backend),
                    models: Vec::new(),
                    limiter: Arc::clone(&limiter),
                    wait: None,
                },
            );
        }
        gateway
    }

    pub fn add_backend(
        &mut self,
        provider: &str,
        models: Vec<String>,
        backend: Arc<dyn CompletionBackend>,
        max_concurrent: usize,
        wait: Option<Duration>,
    ) {
        self.providers.insert(
            provider.to_string(),
            Route {
                backend,
                models,
                limiter: Arc::new(Limiter::new(max_concurrent)),
                wait,
            },
        );
    }

    pub fn add_provider(&mut self, config: ProviderConfig) -> Result<(), String> {
        config.validate()?;
        let wait = Some(config.call_budget());
        let name = config.name.clone();
        let models = config.model_names.clone();
        let cap = config.max_concurrent;
        self.add_backend(&name, models, Arc::new(http::HttpProvider::new(config)), cap, wait);
        Ok(())
    }

    fn route(&self, model: &str) -> Result<&Route, GatewayError> {
        if let Some(route) = self.exact.get(model) {
            return Ok(route);
        }
        let unknown = || GatewayError::UnknownModel(model.to_string());
        let (provider, name) = model.split_once(':').ok_or_else(unknown)?;
        let route = self.providers.get(provider).ok_or_else(unknown)?;
        if !route.models.is_empty() && !route.models.iter().any(|m| m == name) {
            return Err(unknown());
        }
        Ok(route)
    }

    pub fn knows_model(&self, model: &str) -> bool {
        self.route(model).is_ok()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        if request.max_output_tokens < 1 {
            return Err(GatewayError::InvalidRequest);
        }
        let route = self.route(&request.profile.model)?;
        let _permit = route.limiter.acquire(route.wait).ok_or_else(|| GatewayError::RetriesExhausted {
            provider: request.profile.model.clone(),
            attempts: 0,
            last: "timed out waiting for a concurrency slot".into(),
        })?;
        route.backend.complete(request)
    }

    /// Single-turn completion of a prompt written by action code.
    pub fn llm_function_call(&self, prompt: &str, profile: &SamplingProfile, max_output_tokens: usize) -> Result<String, GatewayError> {
        self.complete(&CompletionRequest {
            profile: profile.clone(),
            system_text: String::new(),
            user_text: prompt.to_string(),
            max_output_tokens,
        })
    }

    /// Numbered ballot over raw candidate texts; returns the chosen one verbatim.
    pub fn judge_vote(&self, candidates: &[String], profile: &SamplingProfile) -> Result<String, GatewayError> {
        let request = CompletionRequest {
            profile: profile.clone(),
            system_text: self.judge_system.clone(),
            user_text: render_ballot(candidates),
            max_output_tokens: 16,
        };
        let reply = self.complete(&request)?;
        let choice = first_integer(&reply).ok_or_else(|| GatewayError::Judge(reply.clone()))?;
        choice
            .checked_sub(1)
            .and_then(|i| candidates.get(i))
            .cloned()
            .ok_or(GatewayError::Judge(reply))
    }
}

pub fn render_ballot(candidates: &[String]) -> String {
    let mut ballot = String::from("Candidate answers:\n");
    for (i, c) in candidates.iter().enumerate() {
        ballot.push_str(&format!("{}. {}\n", i + 1, c));
    }
    ballot.push_str("\nReply with the number of the best answer only.");
    ballot
}

fn first_integer(text: &str) -> Option<usize> {
    let start = text.find(|c: char| c.is_ascii_digit())?;
    let digits: String = text[start..].chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}
