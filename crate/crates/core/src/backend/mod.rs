//! Uniform access to chat-completion models.
//!
//! [`HttpBackend`] speaks the OpenAI-compatible `/chat/completions` protocol;
//! [`ScriptedBackend`] replays canned replies so the loop can be exercised
//! without a live model.

mod gate;
mod http;
mod mock;

pub use gate::{AdmissionGate, Gated};
pub use http::HttpBackend;
pub use mock::{MockReply, RecordingBackend, ScriptedBackend};

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    /// Empty means "use the backend's configured model".
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    1024
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        ChatRequest { messages, model_name: String::new(), temperature: 0.0, max_tokens: default_max_tokens() }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("negative temperature".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the message contents joined by newlines.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (i, m) in self.messages.iter().enumerate() {
            if i > 0 {
                hasher.update(b"\n");
            }
            hasher.update(m.content.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Plain-text transcript used for golden files and debugging.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let tag = match m.role {
                Role::System => "[system]",
                Role::User => "[user]",
                Role::Assistant => "[assistant]",
            };
            out.push_str(tag);
            out.push('\n');
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Refusal,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    /// Empty unless `finish_reason` is `Stop` or `Length`.
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub attempt_count: u32,
    #[serde(default)]
    pub raw: serde_json::Value,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        ChatResponse {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            latency: Duration::ZERO,
            attempt_count: 1,
            raw: serde_json::Value::Null,
        }
    }

    pub fn refusal() -> Self {
        ChatResponse {
            content: String::new(),
            finish_reason: FinishReason::Refusal,
            latency: Duration::ZERO,
            attempt_count: 1,
            raw: serde_json::Value::Null,
        }
    }

    pub fn has_content(&self) -> bool {
        matches!(self.finish_reason, FinishReason::Stop | FinishReason::Length)
    }
}

pub(crate) mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("provider returned HTTP {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("missing API key: environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("mock script exhausted after {0} replies")]
    ScriptExhausted(usize),
    #[error("no scripted reply for fingerprint {0}")]
    UnknownFingerprint(String),
}

/// A chat model reachable through `complete`.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint_url: String,
    /// Name of the environment variable holding the bearer token. Unset
    /// means no Authorization header.
    pub api_key_env_var_name: Option<String>,
    pub model_name: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint_url: "http://localhost:8080/v1".into(),
            api_key_env_var_name: None,
            model_name: "default".into(),
            timeout_secs: 120.0,
            max_retries: 3,
            max_in_flight: 4,
            requests_per_minute: None,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.endpoint_url.trim().is_empty() {
            return Err("endpoint_url is empty".into());
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err("timeout_secs must be positive".into());
        }
        if self.requests_per_minute == Some(0) {
            return Err("requests_per_minute must be positive".into());
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err("temperature must be non-negative".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }

    /// Delay before retry number `retry` (1-based), doubling up to the cap.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        let ms = self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}
