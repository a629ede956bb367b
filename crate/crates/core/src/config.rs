//! TOML configuration covering every stage of the pipeline.
//!
//! Every section is optional; missing keys take their defaults. The shipped
//! `config/default.toml` spells out the defaults.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::driver::RcaConfig;
use crate::entity::{CatalogConfig, UnmappedPolicy};
use crate::ingest::VolatileFields;
use crate::llm::{
    BackendError, HttpBackendConfig, KnowledgeConfig, LlmBackend, OpenAiBackend, PromptError, PromptSet,
    RuleOracle, ScriptedBackend, PROMPT_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid backend spec {0:?}; expected oracle, http or mock:<responses.json>")]
    BackendSpec(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Rule-table oracle; no network.
    #[default]
    Oracle,
    /// Scripted responses from a JSON file.
    Mock,
    /// OpenAI-compatible chat-completions endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Response table for the mock backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub responses: Option<PathBuf>,
    pub http: HttpBackendConfig,
}

impl BackendConfig {
    /// Parse a command-line spec: `oracle`, `http` or `mock:<path>`.
    pub fn from_spec(spec: &str, base: &BackendConfig) -> Result<Self, ConfigError> {
        let mut out = base.clone();
        match spec.split_once(':') {
            Some(("mock", path)) if !path.is_empty() => {
                out.kind = BackendKind::Mock;
                out.responses = Some(PathBuf::from(path));
            }
            None if spec == "oracle" => out.kind = BackendKind::Oracle,
            None if spec == "http" => out.kind = BackendKind::Http,
            _ => return Err(ConfigError::BackendSpec(spec.to_owned())),
        }
        Ok(out)
    }

    pub fn build(&self) -> Result<Arc<dyn LlmBackend>, ConfigError> {
        Ok(match self.kind {
            BackendKind::Oracle => Arc::new(RuleOracle::new()),
            BackendKind::Mock => {
                let path = self
                    .responses
                    .as_ref()
                    .ok_or_else(|| ConfigError::BackendSpec("mock without a response file".into()))?;
                // Stages missing from the table are answered by the oracle.
                Arc::new(ScriptedBackend::load(path)?.with_fallback(Arc::new(RuleOracle::new())))
            }
            BackendKind::Http => Arc::new(OpenAiBackend::from_env(self.http.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    /// Directory with `<stage>.<version>.txt` overrides.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub version: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            dir: None,
            version: PROMPT_VERSION.into(),
        }
    }
}

impl PromptConfig {
    pub fn load(&self) -> Result<PromptSet, ConfigError> {
        let set = PromptSet::default();
        Ok(match &self.dir {
            Some(dir) => set.with_overrides(dir, &self.version)?,
            None => set,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub volatile_fields: VolatileFields,
    pub catalog: CatalogConfig,
    pub rca: RcaConfig,
    pub knowledge: KnowledgeConfig,
    pub backend: BackendConfig,
    pub prompts: PromptConfig,
}

impl Default for Config {
    fn default() -> Self {
        // Real snapshots carry many diverse fields that are not references,
        // so the shipped configuration ignores unmapped candidates instead of
        // failing on them.
        let catalog = CatalogConfig {
            unmapped: UnmappedPolicy::Ignore,
            ..CatalogConfig::default()
        };
        Self {
            volatile_fields: VolatileFields::default(),
            catalog,
            rca: RcaConfig::default(),
            knowledge: KnowledgeConfig::default(),
            backend: BackendConfig::default(),
            prompts: PromptConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }
}
