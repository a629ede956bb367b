//! One incident against an OpenAI-compatible endpoint. Needs OPENAI_API_KEY;
//! without it the example prints a notice and exits. Not part of CI.
//!
//! Optional: OPENAI_BASE_URL and OPENAI_MODEL override the defaults.

use std::sync::Arc;

use stategraph_rca::driver::{prepare_graphs, run_rca, RcaContext};
use stategraph_rca::llm::{HttpBackendConfig, LlmBackend, MeteredBackend, OpenAiBackend, PromptSet};
use stategraph_rca::synthetic::synthetic_cluster;
use stategraph_rca::Config;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut http = HttpBackendConfig::default();
    if std::env::var(&http.api_key_env).map_or(true, |k| k.is_empty()) {
        eprintln!("{} is not set; skipping live smoke test", http.api_key_env);
        return Ok(());
    }
    if let Ok(url) = std::env::var("OPENAI_BASE_URL") {
        http.endpoint = url;
    }
    if let Ok(model) = std::env::var("OPENAI_MODEL") {
        http.model = model;
    }

    let corpus = synthetic_cluster();
    let config = Config::default();
    let prepared = prepare_graphs(&corpus.records, &config)?;
    let prompts = PromptSet::default();
    let ctx = RcaContext {
        graph: &prepared.graph,
        meta: &prepared.meta,
        knowledge: &config.knowledge,
        prompts: &prompts,
        config: &config.rca,
    };
    let backend = Arc::new(MeteredBackend::new(Arc::new(OpenAiBackend::from_env(http)?)));
    let incident = corpus.incident("ExceedQuotaJob").expect("scenario present");
    let result = run_rca(&incident, &ctx, backend.clone());
    println!("{}", result.to_markdown());
    for a in &result.attempts {
        assert!(a.accounting_consistent());
    }
    eprintln!("{} network calls", backend.network_calls());
    Ok(())
}
