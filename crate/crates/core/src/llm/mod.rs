//! The five model-backed stages and the backends they run on.

pub mod backend;
pub mod http;
pub mod mock;
pub mod oracle;
pub mod prompts;
pub mod stages;

pub use backend::{
    approx_tokens, BackendError, Completion, CompletionParams, CompletionRequest, LlmBackend, MeteredBackend,
    Stage, Usage,
};
pub use http::{HttpBackendConfig, OpenAiBackend};
pub use mock::ScriptedBackend;
pub use oracle::RuleOracle;
pub use prompts::{PromptError, PromptSet, Template, PROMPT_VERSION};
pub use stages::{
    absence_summary, command_allowed, extract_json_object, fragments_document, truncate_words, word_count,
    CypherOutcome, DiagnosticSummary, Finding, InvestigationVerdict, KnowledgeConfig, LlmSession,
    LocatorResult, NamingConvention, RcaReport, StageError, JSON_REASKS, SUMMARY_WORD_LIMIT,
};
