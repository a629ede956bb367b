//! Loading newline-delimited snapshot envelopes and collapsing consecutive
//! duplicates into time-ranged records.
//!
//! One envelope per line:
//!
//! ```json
//! {"collected_at": "2020-12-10T00:00:00Z", "source": "etcd", "kind": "Pod", "payload": {...}}
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tracing::warn;

use crate::entity::{EntityError, EntityRef, IdentityRules};
use crate::time::{parse_timestamp, Timestamp};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dedup group mixes identities {first} and {other}")]
    MixedIdentities { first: String, other: String },
    #[error("dedup group for {entity} is not ordered by collected_at")]
    OutOfOrder { entity: String },
    #[error(transparent)]
    Identity(#[from] EntityError),
}

/// One observation of one entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSnapshot {
    pub collected_at: Timestamp,
    #[serde(default)]
    pub source: String,
    pub kind: String,
    pub payload: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SnapshotStream {
    pub records: Vec<RawSnapshot>,
    pub skipped: Vec<SkippedLine>,
}

impl SnapshotStream {
    pub fn skipped_count(&self) -> usize {
        self.skipped.len()
    }
}

pub fn load_snapshot_stream(path: &Path) -> Result<SnapshotStream, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_snapshot_stream(BufReader::new(file)).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Parse envelopes in order. Malformed lines are skipped and reported;
/// blank lines are ignored.
pub fn read_snapshot_stream<R: BufRead>(reader: R) -> Result<SnapshotStream, IngestError> {
    let mut out = SnapshotStream::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: "<stream>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_envelope(&line) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => {
                warn!(line = idx + 1, %reason, "skipping snapshot line");
                out.skipped.push(SkippedLine {
                    line: idx + 1,
                    reason,
                });
            }
        }
    }
    Ok(out)
}

pub fn parse_envelope(line: &str) -> Result<RawSnapshot, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("envelope is not a JSON object")?;
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .filter(|k| !k.is_empty())
        .ok_or("missing kind")?;
    let collected_at = obj
        .get("collected_at")
        .and_then(Value::as_str)
        .ok_or("missing collected_at")?;
    let collected_at =
        parse_timestamp(collected_at).map_err(|e| format!("collected_at is not RFC 3339: {e}"))?;
    let payload = obj
        .get("payload")
        .and_then(Value::as_object)
        .ok_or("payload is not a JSON object")?;
    let source = obj.get("source").and_then(Value::as_str).unwrap_or_default();
    Ok(RawSnapshot {
        collected_at,
        source: source.to_owned(),
        kind: kind.to_owned(),
        payload: payload.clone(),
    })
}

pub fn write_snapshot_stream<W: Write>(mut w: W, records: &[RawSnapshot]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Dotted payload paths ignored when comparing snapshots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VolatileFields(pub Vec<String>);

impl Default for VolatileFields {
    fn default() -> Self {
        VolatileFields(
            [
                "metadata.resourceVersion",
                "metadata.managedFields",
                "collected_at",
                "collectedAt",
            ]
            .into_iter()
            .map(str::to_owned)
            .collect(),
        )
    }
}

impl VolatileFields {
    pub fn strip(&self, payload: &Map<String, Value>) -> Map<String, Value> {
        let mut out = payload.clone();
        for path in &self.0 {
            remove_path(&mut out, path);
        }
        out
    }
}

fn remove_path(obj: &mut Map<String, Value>, path: &str) {
    match path.split_once('.') {
        None => {
            obj.remove(path);
        }
        Some((head, rest)) => {
            if let Some(Value::Object(child)) = obj.get_mut(head) {
                remove_path(child, rest);
            }
        }
    }
}

/// Structural equality after dropping volatile fields. Object key order never
/// matters.
pub fn payload_equal(a: &Map<String, Value>, b: &Map<String, Value>, volatile: &VolatileFields) -> bool {
    volatile.strip(a) == volatile.strip(b)
}

/// A run of payload-identical observations of one entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupedSnapshot {
    pub identity: EntityRef,
    pub kind: String,
    pub t_min: Timestamp,
    pub t_max: Timestamp,
    /// Payload of the last observation in the run.
    pub payload: Map<String, Value>,
    /// Number of raw observations collapsed into this record.
    pub run_length: usize,
}

/// Collapse maximal runs of payload-equal consecutive records of one entity.
pub fn dedup_consecutive(
    group: &[RawSnapshot],
    rules: &IdentityRules,
    volatile: &VolatileFields,
) -> Result<Vec<DedupedSnapshot>, IngestError> {
    let Some(first) = group.first() else {
        return Ok(Vec::new());
    };
    let identity = rules.primary_identity(&first.kind, &first.payload)?;
    let mut singles = Vec::with_capacity(group.len());
    let mut prev: Option<Timestamp> = None;
    for rec in group {
        let id = rules.primary_identity(&rec.kind, &rec.payload)?;
        if id != identity || rec.kind != first.kind {
            return Err(IngestError::MixedIdentities {
                first: identity.key(),
                other: id.key(),
            });
        }
        if prev.is_some_and(|p| rec.collected_at < p) {
            return Err(IngestError::OutOfOrder {
                entity: identity.key(),
            });
        }
        prev = Some(rec.collected_at);
        let mut identity = identity.clone();
        identity.absorb_hints(&id);
        singles.push(DedupedSnapshot {
            identity,
            kind: rec.kind.clone(),
            t_min: rec.collected_at,
            t_max: rec.collected_at,
            payload: rec.payload.clone(),
            run_length: 1,
        });
    }
    Ok(merge_runs(singles, volatile))
}

/// Merge adjacent payload-equal records, extending the time range and keeping
/// the later payload. Applying it to its own output is a no-op.
pub fn merge_runs(records: Vec<DedupedSnapshot>, volatile: &VolatileFields) -> Vec<DedupedSnapshot> {
    let mut out: Vec<DedupedSnapshot> = Vec::with_capacity(records.len());
    for rec in records {
        match out.last_mut() {
            Some(last) if payload_equal(&last.payload, &rec.payload, volatile) => {
                last.t_max = last.t_max.max(rec.t_max);
                last.payload = rec.payload;
                last.run_length += rec.run_length;
            }
            _ => out.push(rec),
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct DedupOutcome {
    pub snapshots: Vec<DedupedSnapshot>,
    /// `(index into the input, reason)` for records without a usable identity.
    pub skipped: Vec<(usize, String)>,
}

/// Group a whole stream per entity, order each group by collection time and
/// dedup it. Output is ordered by entity key, then time.
pub fn dedup_stream(
    records: &[RawSnapshot],
    rules: &IdentityRules,
    volatile: &VolatileFields,
) -> Result<DedupOutcome, IngestError> {
    let mut groups: BTreeMap<(String, String), Vec<RawSnapshot>> = BTreeMap::new();
    let mut outcome = DedupOutcome::default();
    for (idx, rec) in records.iter().enumerate() {
        match rules.primary_identity(&rec.kind, &rec.payload) {
            Ok(id) => groups
                .entry((rec.kind.clone(), id.key()))
                .or_default()
                .push(rec.clone()),
            Err(e) => {
                warn!(index = idx, error = %e, "snapshot without identity skipped");
                outcome.skipped.push((idx, e.to_string()));
            }
        }
    }
    for (_, mut group) in groups {
        group.sort_by_key(|r| r.collected_at);
        outcome
            .snapshots
            .extend(dedup_consecutive(&group, rules, volatile)?);
    }
    Ok(outcome)
}
