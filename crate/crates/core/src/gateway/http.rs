//! HTTP adapters for real providers.
//!
//! Two wire shapes are supported: OpenAI-compatible chat completions and
//! Anthropic-style messages. Transport failures, 408, 429 and 5xx are retried
//! with exponential backoff (`base * 2^attempt`, jitter +/-20%) until the
//! retry count or the call budget runs out.

use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};

use super::{CompletionBackend, CompletionRequest, GatewayError, ProviderConfig, WireShape};

const ANTHROPIC_VERSION: &str = "2023-06-01";

pub struct HttpProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
}

/// Delay before retry number `attempt` (0-based), scaled by `jitter` in [0.8, 1.2].
pub fn backoff_delay(base: Duration, attempt: u32, jitter: f64) -> Duration {
    let factor = 2u32.saturating_pow(attempt.min(20));
    base.saturating_mul(factor).mul_f64(jitter.clamp(0.8, 1.2))
}

enum Failure {
    Transient(String),
    Fatal(GatewayError),
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn model_name<'a>(&self, model: &'a str) -> &'a str {
        model.split_once(':').map(|(_, name)| name).unwrap_or(model)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let model = self.model_name(&request.profile.model);
        match self.config.shape {
            WireShape::OpenaiChat => {
                let mut messages = Vec::new();
                if !request.system_text.is_empty() {
                    messages.push(json!({"role": "system", "content": request.system_text}));
                }
                messages.push(json!({"role": "user", "content": request.user_text}));
                json!({
                    "model": model,
                    "messages": messages,
                    "temperature": request.profile.temperature,
                    "max_tokens": request.max_output_tokens,
                })
            }
            WireShape::AnthropicMessages => {
                let mut body = json!({
                    "model": model,
                    "messages": [{"role": "user", "content": request.user_text}],
                    "temperature": request.profile.temperature,
                    "max_tokens": request.max_output_tokens,
                });
                if !request.system_text.is_empty() {
                    body["system"] = json!(request.system_text);
                }
                body
            }
        }
    }

    fn parse_reply(&self, body: &str) -> Result<String, GatewayError> {
        let bad = |message: String| GatewayError::BadResponse {
            provider: self.config.name.clone(),
            message,
        };
        let value: Value = serde_json::from_str(body).map_err(|e| bad(format!("invalid JSON: {e}")))?;
        let text = match self.config.shape {
            WireShape::OpenaiChat => value["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string),
            WireShape::AnthropicMessages => value["content"].as_array().map(|blocks| {
                blocks
                    .iter()
                    .filter(|b| b["type"] == "text")
                    .filter_map(|b| b["text"].as_str())
                    .collect::<String>()
            }),
        };
        text.ok_or_else(|| bad("no completion text in response".into()))
    }

    fn attempt(&self, request: &CompletionRequest, key: &str, timeout: Duration) -> Result<String, Failure> {
        let (path, auth_header, auth_value) = match self.config.shape {
            WireShape::OpenaiChat => ("chat/completions", "Authorization", format!("Bearer {key}")),
            WireShape::AnthropicMessages => ("messages", "x-api-key", key.to_string()),
        };
        let mut call = self
            .agent
            .post(&self.url(path))
            .header(auth_header, &auth_value)
            .header("content-type", "application/json");
        if self.config.shape == WireShape::AnthropicMessages {
            call = call.header("anthropic-version", ANTHROPIC_VERSION);
        }
        let response = call
            .config()
            .timeout_global(Some(timeout))
            .build()
            .send_json(self.request_body(request))
            .map_err(|e| Failure::Transient(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let body = response
            .into_body()
            .read_to_string()
            .map_err(|e| Failure::Transient(format!("reading body: {e}")))?;
        match status {
            200..=299 => self.parse_reply(&body).map_err(Failure::Fatal),
            408 | 429 | 500..=599 => Failure::Transient(format!("HTTP {status}")).into_err(),
            _ => Err(Failure::Fatal(GatewayError::Http {
                provider: self.config.name.clone(),
                status,
                body: crate::text::clip(&body, 500).to_string(),
            })),
        }
    }
}

impl Failure {
    fn into_err<T>(self) -> Result<T, Failure> {
        Err(self)
    }
}

impl CompletionBackend for HttpProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        // Credentials are checked before any network traffic.
        let key = std::env::var(&self.config.auth_env_var)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| GatewayError::MissingCredential {
                provider: self.config.name.clone(),
                env_var: self.config.auth_env_var.clone(),
            })?;

        let deadline = Instant::now() + self.config.call_budget();
        let per_attempt = Duration::from_millis(self.config.request_timeout_ms);
        let base = Duration::from_millis(self.config.retry_base_ms);
        let mut last = String::new();
        let mut attempts = 0;
        for attempt in 0..=self.config.max_retries {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            attempts += 1;
            match self.attempt(request, &key, per_attempt.min(remaining)) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(message)) => {
                    tracing::debug!(provider = %self.config.name, attempt, %message, "transient failure");
                    last = message;
                }
            }
            if attempt < self.config.max_retries {
                let jitter = rand::rng().random_range(0.8..=1.2);
                let pause = backoff_delay(base, attempt, jitter)
                    .min(deadline.saturating_duration_since(Instant::now()));
                std::thread::sleep(pause);
            }
        }
        Err(GatewayError::RetriesExhausted {
            provider: self.config.name.clone(),
            attempts,
            last,
        })
    }
}
