//! Read a snapshot stream, drop malformed lines and collapse unchanged polls.

use std::io::Cursor;

use stategraph_rca::ingest::{dedup_stream, read_snapshot_stream, VolatileFields};
use stategraph_rca::Config;

const STREAM: &str = r#"{"collected_at":"2024-05-01T10:00:00Z","source":"etcd","kind":"Pod","payload":{"metadata":{"uid":"p1","name":"web-0","namespace":"shop","resourceVersion":"11"},"status":{"phase":"Running"}}}
{"collected_at":"2024-05-01T10:05:00Z","source":"etcd","kind":"Pod","payload":{"metadata":{"uid":"p1","name":"web-0","namespace":"shop","resourceVersion":"12"},"status":{"phase":"Running"}}}
this line is not JSON
{"collected_at":"2024-05-01T10:10:00Z","source":"etcd","kind":"Pod","payload":{"metadata":{"uid":"p1","name":"web-0","namespace":"shop","resourceVersion":"13"},"status":{"phase":"Pending"}}}
{"collected_at":"2024-05-01T10:00:00Z","source":"etcd","kind":"ConfigMap","payload":{"metadata":{"uid":"c1","name":"web-conf","namespace":"shop"},"data":{"mode":"fast"}}}
{"collected_at":"2024-05-01T10:10:00Z","source":"etcd","kind":"ConfigMap","payload":{"metadata":{"uid":"c1","name":"web-conf","namespace":"shop"},"data":{"mode":"fast"}}}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stream = read_snapshot_stream(Cursor::new(STREAM))?;
    println!(
        "{} records, {} skipped",
        stream.records.len(),
        stream.skipped_count()
    );

    let config = Config::default();
    let out = dedup_stream(
        &stream.records,
        &config.catalog.identity_rules(),
        &VolatileFields::default(),
    )?;
    for s in &out.snapshots {
        println!(
            "{:<10} {:<4} [{} .. {}] x{}",
            s.kind,
            s.identity,
            s.t_min.format("%H:%M"),
            s.t_max.format("%H:%M"),
            s.run_length
        );
    }
    Ok(())
}
