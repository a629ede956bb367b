//! Build the StateGraph of the synthetic cluster and inspect it: edge counts
//! per type, one entity's snapshots and the JSON round trip.

use std::collections::BTreeMap;

use stategraph_rca::driver::prepare_graphs;
use stategraph_rca::synthetic::{incident_time, synthetic_cluster};
use stategraph_rca::time::format_timestamp;
use stategraph_rca::{Config, EntityRef, StateGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synthetic_cluster();
    let prepared = prepare_graphs(&corpus.records, &Config::default())?;
    let graph = &prepared.graph;
    println!(
        "{} raw records -> {} snapshots -> {} vertices, {} edges",
        corpus.records.len(),
        prepared.deduped.len(),
        graph.vertex_count(),
        graph.edge_count()
    );

    let mut by_type: BTreeMap<String, usize> = BTreeMap::new();
    for e in graph.edges() {
        *by_type.entry(e.edge_type.to_string()).or_default() += 1;
    }
    for (t, n) in &by_type {
        println!("  {t:<14} {n}");
    }

    let quota = graph
        .entities()
        .map(|(_, e)| e.entity.clone())
        .find(|e: &EntityRef| e.kind == "ResourceQuota")
        .expect("synthetic cluster has a quota");
    println!("\nsnapshots of {quota}:");
    for s in graph.snapshots_of(&quota) {
        println!(
            "  {} [{} .. {}]",
            s.label,
            format_timestamp(&s.t_min),
            format_timestamp(&s.t_max)
        );
    }
    if let Some(s) = graph.latest_state(&quota, incident_time()) {
        println!(
            "state at incident time:\n{}",
            serde_json::to_string_pretty(&s.state_json)?
        );
    }

    let back = StateGraph::from_json(&graph.to_json())?;
    assert_eq!(back.to_json(), graph.to_json());
    assert!(graph.invariant_violations().is_empty());
    println!("\nJSON round trip ok");
    Ok(())
}
