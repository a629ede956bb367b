//! Score the labeled synthetic corpus in retrieval mode and print the
//! per-type precision table.

use std::sync::Arc;

use stategraph_rca::driver::{prepare_graphs, run_eval, EvalMode, RcaContext};
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
    let mode = match std::env::args().nth(1).as_deref() {
        Some("report") => EvalMode::Report,
        _ => EvalMode::Retrieval,
    };
    let report = run_eval(&corpus.incidents, &ctx, Arc::new(RuleOracle::new()), mode);
    print!("{}", report.to_markdown());
    Ok(())
}
