mod common;

use proptest::prelude::*;

use stategraph_rca::metagraph::{
    build_meta_graph, extend_metapath, extract_quadruplets, find_metapaths, MetaGraph, MetaGraphError,
    MetapathLimits,
};
use stategraph_rca::{Metapath, StateGraph};

use common::{random_prepared, rng, Fixture, GOLDEN_LISTING};

/// Each StateGraph edge is covered by exactly one MetaEdge, and the
/// frequencies add up to the edge count.
fn coverage_holds(graph: &StateGraph, meta: &MetaGraph) -> bool {
    let covered = graph.edges().all(|e| {
        let (s, d) = (graph.kind_of(&e.src).unwrap(), graph.kind_of(&e.dst).unwrap());
        meta.edges()
            .iter()
            .filter(|m| m.src_kind == s && m.dest_kind == d && m.key == e.key && m.edge_type == e.edge_type)
            .count()
            == 1
    });
    covered && meta.total_frequency() == graph.edge_count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_graphs_are_covered(seed in any::<u64>()) {
        let p = random_prepared(&mut rng(seed), 200);
        prop_assert!(coverage_holds(&p.graph, &p.meta));
    }

    #[test]
    fn metapaths_are_connected_and_ranked(seed in any::<u64>()) {
        let p = random_prepared(&mut rng(seed), 200);
        let kinds = p.meta.entity_kinds();
        for dest in &kinds {
            let Ok(found) = find_metapaths(&p.meta, "Pod", dest, &[], &MetapathLimits::default()) else { continue };
            prop_assert!(found.len() <= MetapathLimits::default().max_paths);
            for w in found.windows(2) {
                prop_assert_ne!(stategraph_rca::metagraph::rank_order(&w[0], &w[1]), std::cmp::Ordering::Greater);
            }
            for r in &found {
                let kinds = r.path.kinds();
                prop_assert_eq!(kinds.first().copied(), Some("Pod"));
                prop_assert_eq!(kinds.last().copied(), Some(dest.as_str()));
                for pair in r.path.steps.windows(2) {
                    prop_assert_eq!(pair[0].to_kind(), pair[1].from_kind());
                }
                let listing = extend_metapath(&r.path, "Pod").to_listing();
                prop_assert_eq!(Metapath::parse_listing(&listing).unwrap(), extend_metapath(&r.path, "Pod"));
            }
        }
    }
}

#[test]
fn synthetic_graph_is_covered() {
    let f = Fixture::new();
    assert!(coverage_holds(&f.prepared.graph, &f.prepared.meta));
}

#[test]
fn nosuchfiledir_listing_is_reproduced() {
    let f = Fixture::new();
    let inter = vec!["PersistentVolumeClaim".to_owned(), "PersistentVolume".to_owned()];
    let ranked = find_metapaths(&f.prepared.meta, "Pod", "nfs", &inter, &MetapathLimits::default()).unwrap();
    let top = extend_metapath(&ranked[0].path, "Pod");
    assert_eq!(top.to_listing(), GOLDEN_LISTING);
    assert_eq!(Metapath::parse_listing(GOLDEN_LISTING).unwrap(), top);
}

#[test]
fn unknown_kind_and_conflicts() {
    let f = Fixture::new();
    let err = find_metapaths(
        &f.prepared.meta,
        "Pod",
        "Gateway",
        &[],
        &MetapathLimits::default(),
    )
    .unwrap_err();
    assert_eq!(err, MetaGraphError::UnknownKind("Gateway".into()));
    let q = extract_quadruplets(&f.prepared.graph);
    // Declaring a native kind as external contradicts its ReferInternal edges.
    assert!(matches!(
        build_meta_graph(&q, ["Pod"]),
        Err(MetaGraphError::ExternalNativeConflict(_))
    ));
}

#[test]
fn short_limit_gives_empty_result() {
    let f = Fixture::new();
    let limits = MetapathLimits {
        max_len: 1,
        max_paths: 10,
    };
    assert!(matches!(
        find_metapaths(&f.prepared.meta, "Pod", "nfs", &[], &limits),
        Err(MetaGraphError::EmptyResult { .. })
    ));
}
