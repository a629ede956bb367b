//! Drive the retry loop with scripted model answers: the first locator guess
//! names a kind with no metapath, the second names the right one. Stages
//! without a script fall through to the rule-based oracle.

use std::sync::Arc;

use stategraph_rca::driver::{prepare_graphs, run_rca, RcaContext};
use stategraph_rca::llm::{PromptSet, RuleOracle, ScriptedBackend, Stage};
use stategraph_rca::synthetic::synthetic_cluster;
use stategraph_rca::Config;

fn main() -> Result<(), Box<dyn std::error::Error>> {
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

    let backend = ScriptedBackend::new()
        .script(
            Stage::Locator,
            "*",
            [
                r#"{"destKind": "Node"}"#,
                r#"{"destKind": "ResourceQuota", "interKinds": ["Namespace"]}"#,
            ],
        )
        .with_fallback(Arc::new(RuleOracle::new()));

    let incident = corpus.incident("ExceedQuotaJob").expect("scenario present");
    let result = run_rca(&incident, &ctx, Arc::new(backend));
    for a in &result.attempts {
        let dest = a.locator.as_ref().map_or("-", |l| l.dest_kind.as_str());
        println!(
            "trial {} destKind={dest:<14} statepaths={} error={}",
            a.trial_index,
            a.statepaths.len(),
            a.error.as_deref().unwrap_or("-")
        );
    }
    println!("status {}", result.status);
    println!("{}", result.to_markdown());
    Ok(())
}
