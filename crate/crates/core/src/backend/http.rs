use std::time::{Duration, Instant};

use log::{debug, warn};
use serde_json::{json, Value};

use super::gate::AdmissionGate;
use super::{Backend, BackendConfig, BackendError, ChatRequest, ChatResponse, FinishReason};

/// Client for an OpenAI-compatible chat-completions endpoint.
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    gate: AdmissionGate,
}

enum Attempt {
    Done(Result<ChatResponse, BackendError>),
    Retry(BackendError),
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable.
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate().map_err(BackendError::InvalidRequest)?;
        let api_key = match &config.api_key_env_var_name {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::MissingApiKey(var.clone()))?),
            None => None,
        };
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
                .build(),
        );
        let gate = AdmissionGate::new(config.max_in_flight, config.requests_per_minute);
        Ok(HttpBackend { config, agent, api_key, gate })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint_url.trim_end_matches('/'))
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let model = if request.model_name.is_empty() { &self.config.model_name } else { &request.model_name };
        json!({
            "model": model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, url: &str, body: &Value) -> Attempt {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send(body.to_string()) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(BackendError::Timeout),
            Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(BackendError::Timeout),
            Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string())),
        };
        match status {
            200..=299 => Attempt::Done(parse_completion(&text)),
            429 => Attempt::Retry(BackendError::RateLimited { attempts: 0 }),
            500..=599 => Attempt::Retry(BackendError::ProviderError { status, body: text }),
            _ => Attempt::Done(Err(BackendError::ProviderError { status, body: text })),
        }
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let url = self.url();
        let body = self.body(request);
        let _permit = self.gate.acquire();
        let started = Instant::now();
        let max_attempts = self.config.max_retries + 1;
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 1..=max_attempts {
            if attempt > 1 {
                let delay = self.config.backoff(attempt - 1);
                debug!("retry {attempt}/{max_attempts} after {delay:?}: {last}");
                std::thread::sleep(delay);
            }
            match self.attempt(&url, &body) {
                Attempt::Done(result) => {
                    return result.map(|mut r| {
                        r.latency = started.elapsed();
                        r.attempt_count = attempt;
                        r
                    });
                }
                Attempt::Retry(err) => last = err,
            }
        }
        warn!("giving up after {max_attempts} attempts: {last}");
        Err(match last {
            BackendError::RateLimited { .. } => BackendError::RateLimited { attempts: max_attempts },
            other => other,
        })
    }
}

/// Reads `choices[0].message.content` and the finish reason.
pub(crate) fn parse_completion(text: &str) -> Result<ChatResponse, BackendError> {
    let raw: Value = serde_json::from_str(text).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let choice = raw
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0]".into()))?;
    let message = choice.get("message");
    let content = message.and_then(|m| m.get("content")).and_then(Value::as_str);
    let refusal = message.and_then(|m| m.get("refusal")).and_then(Value::as_str).filter(|r| !r.is_empty());
    let finish = choice.get("finish_reason").and_then(Value::as_str).unwrap_or("stop");
    let finish_reason = match finish {
        _ if refusal.is_some() => FinishReason::Refusal,
        "length" => FinishReason::Length,
        "content_filter" | "refusal" => FinishReason::Refusal,
        "error" => FinishReason::Error,
        _ => FinishReason::Stop,
    };
    let content = match (finish_reason, content) {
        (FinishReason::Stop | FinishReason::Length, Some(c)) => c.to_string(),
        (FinishReason::Stop | FinishReason::Length, None) => {
            return Err(BackendError::MalformedResponse("missing choices[0].message.content".into()))
        }
        _ => String::new(),
    };
    Ok(ChatResponse { content, finish_reason, latency: Duration::ZERO, attempt_count: 1, raw })
}
