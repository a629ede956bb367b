//! Derive the MetaGraph of the synthetic cluster and list the ranked
//! metapaths from Pod to nfs, extended with the EVENT prefix.

use stategraph_rca::driver::prepare_graphs;
use stategraph_rca::metagraph::{extend_metapath, find_metapaths, MetapathLimits};
use stategraph_rca::synthetic::synthetic_cluster;
use stategraph_rca::Config;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synthetic_cluster();
    let prepared = prepare_graphs(&corpus.records, &Config::default())?;
    let meta = &prepared.meta;
    println!(
        "{} kinds, {} quadruplets covering {} StateGraph edges",
        meta.kinds().count(),
        meta.edge_count(),
        meta.total_frequency()
    );
    for e in meta.edges() {
        println!(
            "  ({}, {}, {}, {}) x{}",
            e.src_kind, e.dest_kind, e.key, e.edge_type, e.frequency
        );
    }

    let inter = vec!["PersistentVolumeClaim".to_owned(), "PersistentVolume".to_owned()];
    let ranked = find_metapaths(meta, "Pod", "nfs", &inter, &MetapathLimits::default())?;
    for (i, r) in ranked.iter().enumerate() {
        println!(
            "\n#{} inter={} min_freq={}\n{}",
            i + 1,
            r.inter_kinds_visited,
            r.min_frequency,
            extend_metapath(&r.path, "Pod").to_listing()
        );
    }
    Ok(())
}
