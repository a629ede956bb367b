use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// The five pipeline stages that talk to a backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Locator,
    Cypher,
    Summarizer,
    Report,
    Estimator,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Locator,
        Stage::Cypher,
        Stage::Summarizer,
        Stage::Report,
        Stage::Estimator,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Locator => "locator",
            Stage::Cypher => "cypher",
            Stage::Summarizer => "summarizer",
            Stage::Report => "report",
            Stage::Estimator => "estimator",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionParams {
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: Usage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

impl std::ops::Sub for Usage {
    type Output = Usage;
    fn sub(self, rhs: Usage) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens - rhs.prompt_tokens,
            completion_tokens: self.completion_tokens - rhs.completion_tokens,
        }
    }
}

/// Rough token count for backends that do not report one: a quarter of the
/// character count, rounded up.
pub fn approx_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// One call to a backend. `context` carries the structured inputs the
/// prompt was rendered from; HTTP backends ignore it, the rule-based oracle
/// answers from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub stage: Stage,
    pub incident_id: String,
    pub prompt: String,
    pub params: CompletionParams,
    pub context: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

impl Completion {
    /// Completion with usage estimated from the prompt and response text.
    pub fn estimated(prompt: &str, text: impl Into<String>) -> Self {
        let text = text.into();
        let usage = Usage {
            prompt_tokens: approx_tokens(prompt),
            completion_tokens: approx_tokens(&text),
        };
        Self { text, usage }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("HTTP request failed: {0}")]
    Http(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("scripted backend: {0}")]
    Script(String),
}

/// A completion provider. Implementations must tolerate concurrent calls.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;

    fn name(&self) -> &str;

    /// Outbound network requests issued so far.
    fn network_calls(&self) -> usize {
        0
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }

    fn network_calls(&self) -> usize {
        (**self).network_calls()
    }
}

/// Wraps a backend and keeps its own usage totals, independent of the
/// per-stage accounting done by callers.
pub struct MeteredBackend {
    inner: Arc<dyn LlmBackend>,
    totals: Mutex<BTreeMap<String, Usage>>,
    calls: AtomicUsize,
}

impl MeteredBackend {
    pub fn new(inner: Arc<dyn LlmBackend>) -> Self {
        Self {
            inner,
            totals: Mutex::new(BTreeMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Usage reported by the inner backend for one incident.
    pub fn usage_for(&self, incident_id: &str) -> Usage {
        self.totals
            .lock()
            .expect("usage lock")
            .get(incident_id)
            .copied()
            .unwrap_or_default()
    }

    pub fn total_usage(&self) -> Usage {
        let mut sum = Usage::default();
        for u in self.totals.lock().expect("usage lock").values() {
            sum.add(*u);
        }
        sum
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmBackend for MeteredBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let out = self.inner.complete(request)?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.totals
            .lock()
            .expect("usage lock")
            .entry(request.incident_id.clone())
            .or_default()
            .add(out.usage);
        Ok(out)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }

    fn network_calls(&self) -> usize {
        self.inner.network_calls()
    }
}
