//! Build graphs from the synthetic cluster and explain every incident with
//! the rule-based oracle backend.

use std::sync::Arc;

use stategraph_rca::driver::{prepare_graphs, run_rca, RcaContext};
use stategraph_rca::llm::{PromptSet, RuleOracle};
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
    let backend = Arc::new(RuleOracle::new());

    for (i, row) in corpus.incidents.iter().enumerate() {
        let result = run_rca(&row.incident(i), &ctx, backend.clone());
        let root = result
            .final_report
            .as_ref()
            .and_then(|r| r.root_cause.as_ref())
            .map_or("-".to_owned(), ToString::to_string);
        println!(
            "{:<24} {:<10} attempts={} root_cause={root}",
            row.type_label.as_deref().unwrap_or("?"),
            result.status.to_string(),
            result.attempts.len()
        );
    }

    let first = corpus.incident("ExceedQuotaJob").expect("scenario present");
    println!("\n{}", run_rca(&first, &ctx, backend).to_markdown());
    Ok(())
}
