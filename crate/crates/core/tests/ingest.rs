mod common;

use std::io::Cursor;

use proptest::prelude::*;
use serde_json::json;

use stategraph_rca::entity::CatalogConfig;
use stategraph_rca::ingest::{
    dedup_consecutive, dedup_stream, merge_runs, payload_equal, read_snapshot_stream, write_snapshot_stream,
    IngestError, VolatileFields,
};
use stategraph_rca::RawSnapshot;

use common::{dedup_oracle, random_stream, rng, sorted_runs, Run};

fn dedup(records: &[RawSnapshot]) -> Vec<Run> {
    let out = dedup_stream(
        records,
        &CatalogConfig::default().identity_rules(),
        &VolatileFields::default(),
    )
    .unwrap();
    sorted_runs(out.snapshots.iter().map(Run::of).collect())
}

fn pod_line(t: &str, phase: &str) -> String {
    json!({
        "collected_at": t,
        "source": "etcd",
        "kind": "Pod",
        "payload": {"metadata": {"uid": "p1", "name": "web", "namespace": "ns"}, "status": {"phase": phase}}
    })
    .to_string()
}

#[test]
fn two_runs_from_three_records() {
    let text = [
        pod_line("2024-01-01T00:00:00Z", "Running"),
        pod_line("2024-01-01T00:05:00Z", "Running"),
        pod_line("2024-01-01T00:10:00Z", "Failed"),
    ]
    .join("\n");
    let stream = read_snapshot_stream(Cursor::new(text)).unwrap();
    let rules = CatalogConfig::default().identity_rules();
    let out = dedup_consecutive(&stream.records, &rules, &VolatileFields::default()).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(
        (out[0].t_min.to_rfc3339(), out[0].t_max.to_rfc3339()),
        (
            "2024-01-01T00:00:00+00:00".into(),
            "2024-01-01T00:05:00+00:00".into()
        )
    );
    assert_eq!(out[0].run_length, 2);
    assert_eq!(out[1].t_min, out[1].t_max);
}

#[test]
fn replica_change_on_third_poll() {
    let records: Vec<RawSnapshot> = (0..6)
        .map(|k| {
            let replicas = if k < 2 { 1 } else { 2 };
            RawSnapshot {
                collected_at: common::t0() + chrono::Duration::minutes(5 * k),
                source: "etcd".into(),
                kind: "Pod".into(),
                payload: json!({"metadata": {"uid": "p", "resourceVersion": k.to_string()}, "spec": {"replicas": replicas}})
                    .as_object()
                    .unwrap()
                    .clone(),
            }
        })
        .collect();
    assert_eq!(dedup(&records).len(), 2);
}

#[test]
fn garbage_lines_are_skipped() {
    let text = format!(
        "{}\nnot json at all\n{}\n{}\n",
        pod_line("2024-01-01T00:00:00Z", "Running"),
        pod_line("2024-01-01T00:05:00Z", "Running"),
        pod_line("2024-01-01T00:10:00Z", "Running")
    );
    let stream = read_snapshot_stream(Cursor::new(text)).unwrap();
    assert_eq!(stream.records.len(), 3);
    assert_eq!(stream.skipped_count(), 1);
}

#[test]
fn mixed_group_is_rejected() {
    let mut records = read_snapshot_stream(Cursor::new(pod_line("2024-01-01T00:00:00Z", "Running")))
        .unwrap()
        .records;
    let mut other = records[0].clone();
    other.payload["metadata"]["uid"] = json!("p2");
    records.push(other);
    let rules = CatalogConfig::default().identity_rules();
    let err = dedup_consecutive(&records, &rules, &VolatileFields::default()).unwrap_err();
    assert!(matches!(err, IngestError::MixedIdentities { .. }));
}

#[test]
fn volatile_fields_and_key_order() {
    let v = VolatileFields::default();
    let a = json!({"a": 1, "b": 2, "metadata": {"resourceVersion": "1"}});
    let b = json!({"b": 2, "a": 1, "metadata": {"resourceVersion": "2"}});
    let c = json!({"a": 1, "b": 3, "metadata": {"resourceVersion": "2"}});
    assert!(payload_equal(a.as_object().unwrap(), b.as_object().unwrap(), &v));
    assert!(!payload_equal(a.as_object().unwrap(), c.as_object().unwrap(), &v));
}

#[test]
fn stream_round_trip() {
    let records = random_stream(&mut rng(7), 50);
    let mut buf = Vec::new();
    write_snapshot_stream(&mut buf, &records).unwrap();
    let back = read_snapshot_stream(Cursor::new(buf)).unwrap();
    assert_eq!(back.records, records);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dedup_matches_run_scan(seed in any::<u64>()) {
        let records = random_stream(&mut rng(seed), 400);
        prop_assert_eq!(dedup(&records), sorted_runs(dedup_oracle(&records)));
    }

    #[test]
    fn run_lengths_cover_the_input(seed in any::<u64>()) {
        let records = random_stream(&mut rng(seed), 300);
        let rules = CatalogConfig::default().identity_rules();
        let out = dedup_stream(&records, &rules, &VolatileFields::default()).unwrap();
        let covered: usize = out.snapshots.iter().map(|s| s.run_length).sum();
        prop_assert_eq!(covered + out.skipped.len(), records.len());
    }

    #[test]
    fn dedup_is_idempotent(seed in any::<u64>()) {
        let records = random_stream(&mut rng(seed), 300);
        let rules = CatalogConfig::default().identity_rules();
        let v = VolatileFields::default();
        let once = dedup_stream(&records, &rules, &v).unwrap().snapshots;
        let twice = merge_runs(once.clone(), &v);
        prop_assert_eq!(&twice, &once);
        // Re-deduplicating the surviving payloads changes nothing either.
        let replay: Vec<RawSnapshot> = once
            .iter()
            .map(|d| RawSnapshot { collected_at: d.t_min, source: "etcd".into(), kind: d.kind.clone(), payload: d.payload.clone() })
            .collect();
        let again = dedup_stream(&replay, &rules, &v).unwrap().snapshots;
        prop_assert_eq!(again.len(), once.len());
    }
}
