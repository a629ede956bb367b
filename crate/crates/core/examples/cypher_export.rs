//! Match an incident to its Event, pick the top extended metapath and print
//! both the Cypher text and the statepaths found by the in-process executor.

use stategraph_rca::driver::prepare_graphs;
use stategraph_rca::metagraph::{extend_metapath, find_metapaths, MetapathLimits};
use stategraph_rca::query::{
    compile_plan, emit_cypher, execute_plan, fetch_states, DEFAULT_QUERY_WINDOW_SECS,
};
use stategraph_rca::stategraph::{match_incident_event, MatchConfig};
use stategraph_rca::synthetic::synthetic_cluster;
use stategraph_rca::Config;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synthetic_cluster();
    let prepared = prepare_graphs(&corpus.records, &Config::default())?;
    let incident = corpus.incident("NoSuchFileDir").expect("scenario present");

    let m = match_incident_event(&prepared.graph, &incident, &MatchConfig::default())?;
    println!("incident matched {} (srcKind {})", m.event, m.src_kind);

    let inter = vec!["PersistentVolumeClaim".to_owned(), "PersistentVolume".to_owned()];
    let ranked = find_metapaths(
        &prepared.meta,
        &m.src_kind,
        "nfs",
        &inter,
        &MetapathLimits::default(),
    )?;
    let path = extend_metapath(&ranked[0].path, &m.src_kind);
    println!("\n{}\n", path.to_listing());
    print!("{}", emit_cypher(&path, &m.event)?);

    let plan = compile_plan(
        &path,
        &m.event,
        &m.event_vertex,
        incident.timestamp,
        DEFAULT_QUERY_WINDOW_SECS,
    )?;
    for sp in execute_plan(&plan, &prepared.graph) {
        println!("\nstatepath: {}", sp.display());
        for entry in fetch_states(&sp, &prepared.graph, incident.timestamp).entries {
            let state = if entry.absent { "absent" } else { "present" };
            println!("  {:<28} {state}", entry.entity.to_string());
        }
    }
    Ok(())
}
