//! Canonicalization through a chat-completion endpoint.
//!
//! The transport is a trait so tests can substitute a scripted mock; the
//! shipped [`HttpTransport`] speaks the common `/chat/completions` JSON
//! shape and reads `choices[0].message.content`.

use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_canonical, split_batch, CanonicalPrompt, PromptError, RawPromptBatch};

/// Reconstructed instruction text sent as the system message.
pub const DEFAULT_META_PROMPT: &str = include_str!("../../fixtures/meta_prompt.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("request failed: {0}")]
    Request(String),
    #[error("http status {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Response(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

pub trait ChatTransport {
    /// Returns the assistant message text.
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaPromptConfig {
    #[serde(default = "default_meta_prompt")]
    pub meta_prompt: String,
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: usize,
    /// Name of an environment variable holding a bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_meta_prompt() -> String {
    DEFAULT_META_PROMPT.to_string()
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> usize {
    2
}

impl MetaPromptConfig {
    pub fn new(endpoint: &str, model: &str) -> Result<Self, PromptError> {
        let cfg = Self {
            meta_prompt: default_meta_prompt(),
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            api_key_env: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// TOML first, JSON as a fallback. A `meta_prompt_file` key is not
    /// supported; embed the text or rely on the default.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let cfg: Self = match toml::from_str(text) {
            Ok(c) => c,
            Err(toml_err) => serde_json::from_str(text)
                .map_err(|json_err| PromptError::Config(format!("not TOML ({toml_err}) nor JSON ({json_err})")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| PromptError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(PromptError::Config(format!("timeout must be positive, got {}", self.timeout_secs)));
        }
        if self.model.trim().is_empty() {
            return Err(PromptError::Config("empty model name".into()));
        }
        check_endpoint(&self.endpoint)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

fn check_endpoint(url: &str) -> Result<(), PromptError> {
    let bad = |why: &str| PromptError::Config(format!("endpoint {url:?}: {why}"));
    let rest = url
        .strip_prefix("http://")
        .or_else(|| url.strip_prefix("https://"))
        .ok_or_else(|| bad("scheme must be http or https"))?;
    let authority = rest.split(['/', '?', '#']).next().unwrap_or("");
    let host = match authority.rsplit_once(':') {
        Some((h, port)) if !h.ends_with(']') || authority.starts_with('[') => {
            if port.parse::<u16>().is_err() {
                return Err(bad("invalid port"));
            }
            h
        }
        _ => authority,
    };
    if host.is_empty() || host.contains(char::is_whitespace) || url.contains(char::is_whitespace) {
        return Err(bad("missing or invalid host"));
    }
    Ok(())
}

/// Blocking HTTP client.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn from_config(cfg: &MetaPromptConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = cfg.api_key_env.as_ref().and_then(|var| std::env::var(var).ok());
        Self {
            agent,
            endpoint: cfg.endpoint.clone(),
            api_key,
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let body = serde_json::to_string(request).map_err(|e| TransportError::Request(e.to_string()))?;
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| TransportError::Request(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(TransportError::Status(status));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Request(e.to_string()))?;
        completion_text(&text)
    }
}

/// Extracts `choices[0].message.content` from a completion response.
pub fn completion_text(body: &str) -> Result<String, TransportError> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| TransportError::Response(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| TransportError::Response("no choices[0].message.content".into()))
}

pub fn build_request(batch: &RawPromptBatch, cfg: &MetaPromptConfig) -> ChatRequest {
    ChatRequest {
        model: cfg.model.clone(),
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: cfg.meta_prompt.clone(),
            },
            ChatMessage {
                role: "user".into(),
                content: batch.joined(),
            },
        ],
        temperature: 0.0,
    }
}

fn parse_completion(raw: &str, expected: usize) -> Result<Vec<CanonicalPrompt>, PromptError> {
    let reject = |reason: String| PromptError::UnparseableCompletion {
        raw: raw.to_string(),
        reason,
    };
    let parts = split_batch(raw).map_err(|e| reject(e.to_string()))?;
    let prompts = parts
        .prompts()
        .iter()
        .map(|p| parse_canonical(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| reject(e.to_string()))?;
    if prompts.len() != expected {
        return Err(reject(format!("expected {expected} prompt(s), got {}", prompts.len())));
    }
    Ok(prompts)
}

/// Sends one request (plus up to `cfg.retries` retries on transport
/// failure) and parses the reply. A reply that does not parse is returned
/// as an error and not retried.
pub fn canonicalize_llm(
    batch: &RawPromptBatch,
    cfg: &MetaPromptConfig,
    transport: &dyn ChatTransport,
) -> Result<Vec<CanonicalPrompt>, PromptError> {
    let request = build_request(batch, cfg);
    let attempts = cfg.retries + 1;
    let mut last = String::new();
    for _ in 0..attempts {
        match transport.complete(&request) {
            Ok(raw) => return parse_completion(&raw, batch.len()),
            Err(e) => last = e.to_string(),
        }
    }
    Err(PromptError::TransportExhausted { attempts, last })
}
