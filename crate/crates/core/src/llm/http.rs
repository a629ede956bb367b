use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{approx_tokens, BackendError, Completion, CompletionRequest, LlmBackend, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpBackendConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
        }
    }
}

/// Client for an OpenAI-compatible chat-completions endpoint.
pub struct OpenAiBackend {
    config: HttpBackendConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    requests: AtomicUsize,
}

impl OpenAiBackend {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| BackendError::MissingApiKey(config.api_key_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Http(e.to_string()))?;
        Ok(Self {
            config,
            api_key,
            client,
            requests: AtomicUsize::new(0),
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }
}

pub(crate) fn request_body(model: &str, req: &CompletionRequest) -> Value {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": req.prompt}],
        "temperature": req.params.temperature,
        "max_tokens": req.params.max_tokens,
    })
}

pub(crate) fn parse_response(prompt: &str, body: &Value) -> Result<Completion, BackendError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?
        .to_owned();
    let count = |p: &str| body.pointer(p).and_then(Value::as_u64);
    let usage = match (count("/usage/prompt_tokens"), count("/usage/completion_tokens")) {
        (Some(p), Some(c)) => Usage {
            prompt_tokens: p,
            completion_tokens: c,
        },
        _ => Usage {
            prompt_tokens: approx_tokens(prompt),
            completion_tokens: approx_tokens(&text),
        },
    };
    Ok(Completion { text, usage })
}

impl LlmBackend for OpenAiBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, BackendError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let resp = self
            .client
            .post(self.url())
            .bearer_auth(&self.api_key)
            .json(&request_body(&self.config.model, req))
            .send()
            .map_err(|e| BackendError::Http(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp.json().map_err(|e| BackendError::Malformed(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: body.to_string(),
            });
        }
        parse_response(&req.prompt, &body)
    }

    fn name(&self) -> &str {
        "http"
    }

    fn network_calls(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}
