mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use serde_json::{json, Map, Value};

use stategraph_rca::entity::{
    extract_entities, flatten_keys, profile_keys, select_entity_keys, CatalogConfig, IdentityIndex,
    TargetKind,
};
use stategraph_rca::ingest::{dedup_stream, VolatileFields};
use stategraph_rca::{Config, DedupedSnapshot, EntityRef, Identity};

use common::{random_cluster, rng};

fn obj(v: Value) -> Map<String, Value> {
    v.as_object().unwrap().clone()
}

fn deduped(seed: u64) -> Vec<DedupedSnapshot> {
    let records = random_cluster(&mut rng(seed), 200);
    let config = Config::default();
    dedup_stream(
        &records,
        &config.catalog.identity_rules(),
        &VolatileFields::default(),
    )
    .unwrap()
    .snapshots
}

#[test]
fn claim_name_key_spelling() {
    let p = obj(json!({"spec": {"volumes": [
        {"persistentVolumeClaim": {"claimName": "x"}},
        {"persistentVolumeClaim": {"claimName": "y"}}
    ]}}));
    let keys = flatten_keys(&p);
    assert_eq!(keys.len(), 2);
    assert!(keys
        .iter()
        .all(|(k, _)| k.as_str() == "spec_volumes_persistentVolumeClaim_claimName"));
    assert!(flatten_keys(&Map::new()).is_empty());
}

#[test]
fn diversity_drives_selection() {
    let pods: Vec<DedupedSnapshot> = (0..10)
        .map(|i| DedupedSnapshot {
            identity: EntityRef::uid("Pod", format!("u{i}")),
            kind: "Pod".into(),
            t_min: common::t0(),
            t_max: common::t0(),
            payload: obj(json!({"apiVersion": "v1", "metadata": {"uid": format!("u{i}"), "name": format!("p{i}")}, "spec": {"nodeName": format!("n{i}")}})),
            run_length: 1,
        })
        .collect();
    let stats = profile_keys(&pods);
    assert_eq!(stats.get("Pod", "metadata_uid").unwrap().distinct_value_count, 10);
    assert_eq!(stats.get("Pod", "apiVersion").unwrap().distinct_value_count, 1);
    let catalog = select_entity_keys(&stats, &Config::default().catalog).unwrap();
    assert!(catalog.is_selected("Pod", "metadata_uid"));
    assert!(catalog.is_selected("Pod", "spec_nodeName"));
    assert!(!catalog.is_selected("Pod", "apiVersion"));
}

#[test]
fn unmapped_diverse_key_is_a_config_error_by_default() {
    let pods: Vec<DedupedSnapshot> = (0..5)
        .map(|i| DedupedSnapshot {
            identity: EntityRef::uid("Pod", format!("u{i}")),
            kind: "Pod".into(),
            t_min: common::t0(),
            t_max: common::t0(),
            payload: obj(
                json!({"metadata": {"uid": format!("u{i}")}, "spec": {"hostname": format!("h{i}")}}),
            ),
            run_length: 1,
        })
        .collect();
    let err = select_entity_keys(&profile_keys(&pods), &CatalogConfig::default()).unwrap_err();
    assert!(err.to_string().contains("spec_hostname"), "{err}");
}

#[test]
fn nfs_path_is_use_external() {
    let snaps = deduped(3);
    let catalog = select_entity_keys(&profile_keys(&snaps), &Config::default().catalog).unwrap();
    let key = stategraph_rca::FlatKey::new("spec_nfs_path").unwrap();
    let entry = catalog.entry("PersistentVolume", &key).unwrap();
    assert_eq!(entry.edge_type, stategraph_rca::EdgeType::UseExternal);
    assert_eq!(entry.target, TargetKind::Fixed("nfs".into()));
}

#[test]
fn unknown_pvc_stays_unresolved() {
    let index = IdentityIndex::build(&deduped(5));
    let r = EntityRef::named("PersistentVolumeClaim", Some("alpha"), "never-seen");
    let out = index.canonicalize(&r, None).unwrap();
    assert!(matches!(out.identity, Identity::Name { .. }));
    assert!(out.unresolved);
    let u = EntityRef::uid("Pod", "abc");
    assert_eq!(index.canonicalize(&u, None).unwrap(), u);
}

fn shuffle_arrays(v: &Value, seed: u64) -> Value {
    match v {
        Value::Array(items) => {
            let mut items: Vec<Value> = items.iter().map(|i| shuffle_arrays(i, seed)).collect();
            if seed % 2 == 1 {
                items.reverse();
            }
            let n = items.len();
            if n > 1 {
                items.rotate_left((seed as usize) % n);
            }
            Value::Array(items)
        }
        Value::Object(m) => Value::Object(
            m.iter()
                .map(|(k, x)| (k.clone(), shuffle_arrays(x, seed)))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn leaf_multiset(p: &Map<String, Value>) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (k, v) in flatten_keys(p) {
        out.entry(k.to_string()).or_default().push(v.to_string());
    }
    for v in out.values_mut() {
        v.sort();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flatten_ignores_array_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        for s in deduped(seed) {
            let shuffled = shuffle_arrays(&Value::Object(s.payload.clone()), shuffle);
            prop_assert_eq!(leaf_multiset(&s.payload), leaf_multiset(shuffled.as_object().unwrap()));
        }
    }

    #[test]
    fn canonicalize_is_idempotent_and_targets_follow_catalog(seed in any::<u64>()) {
        let snaps = deduped(seed);
        let catalog = select_entity_keys(&profile_keys(&snaps), &Config::default().catalog).unwrap();
        let index = IdentityIndex::build(&snaps);
        for s in &snaps {
            let Some(ex) = extract_entities(s, &catalog).unwrap() else { continue };
            for r in ex.references {
                let once = index.canonicalize(&r.target, None).unwrap();
                let twice = index.canonicalize(&once, None).unwrap();
                prop_assert_eq!(&once, &twice);
                prop_assert_eq!(once.unresolved, twice.unresolved);
                match &catalog.entry(&s.kind, &r.key).unwrap().target {
                    TargetKind::Fixed(k) => prop_assert_eq!(&r.target.kind, k),
                    TargetKind::FromSibling(_) => prop_assert!(!r.target.kind.is_empty()),
                }
            }
        }
    }
}
