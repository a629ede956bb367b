//! Shared fixtures, random generators and brute-force oracles for the
//! integration tests and the acceptance binary.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::Duration;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use stategraph_rca::driver::{prepare_graphs, PreparedGraphs, RcaContext};
use stategraph_rca::entity::{extract_entities, EntityKeyCatalog, IdentityIndex};
use stategraph_rca::llm::PromptSet;
use stategraph_rca::metagraph::{extend_metapath, find_metapaths, Direction, MetapathLimits};
use stategraph_rca::query::{compile_plan, QueryPlan};
use stategraph_rca::stategraph::{EdgeKey, StateGraph, Vertex, VertexId};
use stategraph_rca::synthetic::{synthetic_cluster, SyntheticCorpus};
use stategraph_rca::time::{parse_timestamp, Timestamp};
use stategraph_rca::{Config, DedupedSnapshot, EdgeType, RawSnapshot};

pub const GOLDEN_LISTING: &str = "HasEvent, Event, EVENT, metadata_uid;\n\
ReferInternal, Event, Pod, involvedObject_uid;\n\
ReferInternal, Pod, PersistentVolumeClaim, spec_volumes_persistentVolumeClaim_claimName;\n\
ReferInternal, PersistentVolume, PersistentVolumeClaim, spec_claimRef_uid;\n\
UseExternal, PersistentVolume, nfs, spec_nfs_path;";

pub const GOLDEN_CYPHER: &str = include_str!("../fixtures/nosuchfiledir.cypher");

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn t0() -> Timestamp {
    parse_timestamp("2024-05-01T00:00:00Z").unwrap()
}

/// The synthetic cluster with its graphs built under the default config.
pub struct Fixture {
    pub corpus: SyntheticCorpus,
    pub config: Config,
    pub prepared: PreparedGraphs,
    pub prompts: PromptSet,
}

impl Fixture {
    pub fn new() -> Self {
        Self::from_corpus(synthetic_cluster())
    }

    pub fn from_corpus(corpus: SyntheticCorpus) -> Self {
        let config = Config::default();
        let prepared = prepare_graphs(&corpus.records, &config).expect("synthetic graphs build");
        Self {
            corpus,
            config,
            prepared,
            prompts: PromptSet::default(),
        }
    }

    pub fn ctx(&self) -> RcaContext<'_> {
        RcaContext {
            graph: &self.prepared.graph,
            meta: &self.prepared.meta,
            knowledge: &self.config.knowledge,
            prompts: &self.prompts,
            config: &self.config.rca,
        }
    }
}

// ---------------------------------------------------------------- dedup

const VOLATILE: [&str; 4] = [
    "metadata.resourceVersion",
    "metadata.managedFields",
    "collected_at",
    "collectedAt",
];

fn strip_volatile(payload: &Map<String, Value>) -> Value {
    fn drop(m: &mut Map<String, Value>, parts: &[&str]) {
        match parts {
            [last] => {
                m.remove(*last);
            }
            [head, rest @ ..] => {
                if let Some(Value::Object(child)) = m.get_mut(*head) {
                    drop(child, rest);
                }
            }
            [] => {}
        }
    }
    let mut m = payload.clone();
    for path in VOLATILE {
        drop(&mut m, &path.split('.').collect::<Vec<_>>());
    }
    Value::Object(m)
}

/// One deduplicated run as the oracle sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub kind: String,
    pub uid: String,
    pub t_min: Timestamp,
    pub t_max: Timestamp,
    pub payload: Map<String, Value>,
    pub run_length: usize,
}

impl Run {
    pub fn of(d: &DedupedSnapshot) -> Self {
        Run {
            kind: d.kind.clone(),
            uid: d
                .identity
                .uid_str()
                .expect("generated records carry uids")
                .to_owned(),
            t_min: d.t_min,
            t_max: d.t_max,
            payload: d.payload.clone(),
            run_length: d.run_length,
        }
    }
}

/// Naive run scan: group by entity, stable-sort by time, and for every
/// record look back at the first record of the open run.
pub fn dedup_oracle(records: &[RawSnapshot]) -> Vec<Run> {
    let mut groups: BTreeMap<(String, String), Vec<&RawSnapshot>> = BTreeMap::new();
    for r in records {
        let uid = r
            .payload
            .get("metadata")
            .and_then(|m| m.get("uid"))
            .and_then(Value::as_str);
        let Some(uid) = uid.filter(|u| !u.is_empty()) else {
            continue;
        };
        groups
            .entry((r.kind.clone(), uid.to_owned()))
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for ((kind, uid), mut group) in groups {
        group.sort_by_key(|r| r.collected_at);
        let mut i = 0;
        while i < group.len() {
            let head = strip_volatile(&group[i].payload);
            let mut j = i;
            while j + 1 < group.len() && strip_volatile(&group[j + 1].payload) == head {
                j += 1;
            }
            out.push(Run {
                kind: kind.clone(),
                uid: uid.clone(),
                t_min: group[i].collected_at,
                t_max: group[j].collected_at,
                payload: group[j].payload.clone(),
                run_length: j - i + 1,
            });
            i = j + 1;
        }
    }
    out
}

/// Group-stable ordering used to compare dedup outputs.
pub fn sorted_runs(mut runs: Vec<Run>) -> Vec<Run> {
    runs.sort_by(|a, b| (&a.kind, &a.uid).cmp(&(&b.kind, &b.uid)));
    runs
}

/// Up to `max` records over a handful of entities, out of order, with
/// volatile churn and occasional identity-less junk.
pub fn random_stream(r: &mut ChaCha8Rng, max: usize) -> Vec<RawSnapshot> {
    let n = r.gen_range(0..=max);
    let entities = r.gen_range(1..=12);
    let phases = ["Running", "Pending", "Failed"];
    let mut state: Vec<(String, &str, usize)> = (0..entities)
        .map(|i| {
            let kind = if i % 3 == 0 { "ConfigMap" } else { "Pod" };
            (kind.to_owned(), phases[0], 1)
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let e = r.gen_range(0..entities);
        if r.gen_bool(0.2) {
            state[e].1 = phases.choose(r).copied().unwrap();
        }
        if r.gen_bool(0.1) {
            state[e].2 = r.gen_range(1..4);
        }
        let (kind, phase, replicas) = &state[e];
        let minute = r.gen_range(0..240);
        let mut payload = json!({
            "metadata": {
                "uid": format!("u{e}"),
                "name": format!("obj-{e}"),
                "namespace": "ns",
                "resourceVersion": r.gen_range(0..1_000_000).to_string(),
            },
            "spec": {"replicas": replicas},
            "status": {"phase": phase},
        });
        if r.gen_bool(0.3) {
            payload["metadata"]["managedFields"] = json!([{"manager": format!("m{}", r.gen_range(0..5))}]);
        }
        if r.gen_bool(0.2) {
            payload["collected_at"] = json!(minute);
        }
        if r.gen_bool(0.02) {
            payload["metadata"].as_object_mut().unwrap().remove("uid");
            payload["metadata"].as_object_mut().unwrap().remove("name");
        }
        out.push(RawSnapshot {
            collected_at: t0() + Duration::minutes(minute),
            source: "etcd".into(),
            kind: kind.clone(),
            payload: payload.as_object().unwrap().clone(),
        });
    }
    out
}

// ---------------------------------------------------------------- random clusters

fn meta(kind: &str, ns: Option<&str>, name: &str) -> Value {
    let mut m =
        json!({"name": name, "uid": format!("{}-{}-{name}", kind.to_lowercase(), ns.unwrap_or("cluster"))});
    if let Some(ns) = ns {
        m["namespace"] = json!(ns);
    }
    m
}

fn obj(kind: &str, ns: Option<&str>, name: &str, rest: Value) -> Map<String, Value> {
    let mut v = json!({"kind": kind, "metadata": meta(kind, ns, name)});
    for (k, val) in rest.as_object().unwrap() {
        v[k] = val.clone();
    }
    v.as_object().unwrap().clone()
}

/// A small random cluster polled `polls` times. References are re-drawn
/// now and then so edges get varied validity ranges, and some point at
/// objects that never exist.
pub fn random_cluster(r: &mut ChaCha8Rng, max_records: usize) -> Vec<RawSnapshot> {
    let namespaces = ["alpha", "beta"];
    let n_cm = r.gen_range(1..4);
    let n_sa = r.gen_range(1..3);
    let n_pvc = r.gen_range(1..4);
    let n_pod = r.gen_range(1..6);
    let n_node = r.gen_range(1..3);
    let polls = r.gen_range(2..8);
    let mut out: Vec<RawSnapshot> = Vec::new();
    let mut pod_refs: Vec<(usize, usize, usize, usize)> = (0..n_pod)
        .map(|_| {
            (
                r.gen_range(0..n_cm + 1),
                r.gen_range(0..n_sa),
                r.gen_range(0..n_pvc),
                r.gen_range(0..n_node),
            )
        })
        .collect();
    let phases = ["Running", "Pending"];
    for k in 0..polls {
        let at = t0() + Duration::minutes(5 * k as i64 + r.gen_range(0..3));
        let mut push = |kind: &str, source: &str, payload: Map<String, Value>, r: &mut ChaCha8Rng| {
            if r.gen_bool(0.85) {
                out.push(RawSnapshot {
                    collected_at: at,
                    source: source.into(),
                    kind: kind.into(),
                    payload,
                });
            }
        };
        for node in 0..n_node {
            push(
                "Node",
                "etcd",
                obj(
                    "Node",
                    None,
                    &format!("node-{node}"),
                    json!({"status": {"ready": true}}),
                ),
                r,
            );
        }
        for ns in namespaces {
            push("Namespace", "etcd", obj("Namespace", None, ns, json!({})), r);
            for i in 0..n_cm {
                push(
                    "ConfigMap",
                    "etcd",
                    obj(
                        "ConfigMap",
                        Some(ns),
                        &format!("cm-{i}"),
                        json!({"data": {"k": "v"}}),
                    ),
                    r,
                );
            }
            for i in 0..n_sa {
                push(
                    "ServiceAccount",
                    "etcd",
                    obj("ServiceAccount", Some(ns), &format!("sa-{i}"), json!({})),
                    r,
                );
            }
            for i in 0..n_pvc {
                let pvc = format!("pvc-{i}");
                let pv = format!("pv-{ns}-{i}");
                let path = format!("/exports/{ns}/{i}");
                let bound = k > 0 || r.gen_bool(0.5);
                let pvc_meta = meta("PersistentVolumeClaim", Some(ns), &pvc);
                push(
                    "PersistentVolumeClaim",
                    "etcd",
                    obj(
                        "PersistentVolumeClaim",
                        Some(ns),
                        &pvc,
                        json!({"spec": {"volumeName": pv}, "status": {"phase": if bound {"Bound"} else {"Pending"}}}),
                    ),
                    r,
                );
                push(
                    "PersistentVolume",
                    "etcd",
                    obj(
                        "PersistentVolume",
                        None,
                        &pv,
                        json!({"spec": {
                            "claimRef": {"kind": "PersistentVolumeClaim", "name": pvc, "namespace": ns, "uid": pvc_meta["uid"]},
                            "nfs": {"server": "10.0.0.1", "path": path}
                        }}),
                    ),
                    r,
                );
                let probe = json!({"server": "10.0.0.1", "path": path, "exists": r.gen_bool(0.8)});
                push("nfs", "nfs-probe", probe.as_object().unwrap().clone(), r);
            }
            for (i, refs) in pod_refs.iter_mut().enumerate() {
                if r.gen_bool(0.25) {
                    *refs = (
                        r.gen_range(0..n_cm + 1),
                        r.gen_range(0..n_sa),
                        r.gen_range(0..n_pvc),
                        r.gen_range(0..n_node),
                    );
                }
                let (cm, sa, pvc, node) = *refs;
                let pod = format!("pod-{i}");
                push(
                    "Pod",
                    "etcd",
                    obj(
                        "Pod",
                        Some(ns),
                        &pod,
                        json!({
                            "spec": {
                                "nodeName": format!("node-{node}"),
                                "serviceAccountName": format!("sa-{sa}"),
                                "volumes": [
                                    {"name": "conf", "configMap": {"name": format!("cm-{cm}")}},
                                    {"name": "data", "persistentVolumeClaim": {"claimName": format!("pvc-{pvc}")}}
                                ]
                            },
                            "status": {"phase": phases[r.gen_range(0..2)]}
                        }),
                    ),
                    r,
                );
                if r.gen_bool(0.4) {
                    let involved = json!({"kind": "Pod", "name": pod, "namespace": ns, "uid": meta("Pod", Some(ns), &pod)["uid"]});
                    push(
                        "Event",
                        "etcd",
                        obj(
                            "Event",
                            Some(ns),
                            &format!("{pod}.{k}"),
                            json!({"involvedObject": involved, "reason": "FailedMount", "message": format!("mount failed for {pod}")}),
                        ),
                        r,
                    );
                }
            }
        }
        if out.len() >= max_records {
            break;
        }
    }
    out.truncate(max_records);
    out.sort_by_key(|s| s.collected_at);
    out
}

pub fn random_prepared(r: &mut ChaCha8Rng, max_records: usize) -> PreparedGraphs {
    let records = random_cluster(r, max_records);
    prepare_graphs(&records, &Config::default()).expect("random cluster builds")
}

// ---------------------------------------------------------------- graph oracle

/// Vertex as the oracle names it: entities by key, snapshots by owner and
/// start time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Node {
    Entity(String),
    Snapshot(String, Timestamp),
}

pub type EdgeRow = (Node, Node, EdgeType, String, Timestamp, Timestamp);

#[derive(Debug, PartialEq)]
pub struct GraphSummary {
    pub entities: BTreeSet<String>,
    pub external: BTreeSet<String>,
    pub snapshots: BTreeSet<(String, Timestamp, Timestamp)>,
    pub edges: Vec<EdgeRow>,
}

fn node_of(graph: &StateGraph, id: &VertexId) -> Node {
    match graph.vertex(id).expect("endpoint exists") {
        Vertex::Entity(e) => Node::Entity(e.entity.key()),
        Vertex::Snapshot(s) => Node::Snapshot(s.owner.key(), s.t_min),
    }
}

pub fn summarize_graph(graph: &StateGraph) -> GraphSummary {
    let mut s = GraphSummary {
        entities: BTreeSet::new(),
        external: BTreeSet::new(),
        snapshots: BTreeSet::new(),
        edges: Vec::new(),
    };
    for (_, e) in graph.entities() {
        s.entities.insert(e.entity.key());
        if e.external {
            s.external.insert(e.entity.key());
        }
    }
    for (_, snap) in graph.snapshots() {
        s.snapshots.insert((snap.owner.key(), snap.t_min, snap.t_max));
    }
    s.edges = graph
        .edges()
        .map(|e| {
            (
                node_of(graph, &e.src),
                node_of(graph, &e.dst),
                e.edge_type,
                e.key.to_string(),
                e.t_min,
                e.t_max,
            )
        })
        .collect();
    s.edges.sort();
    s
}

/// Per-snapshot union of vertices and edges, merged by identity and
/// consolidated into time envelopes.
pub fn graph_oracle(deduped: &[DedupedSnapshot], catalog: &EntityKeyCatalog) -> GraphSummary {
    let index = IdentityIndex::build(deduped);
    let mut entities = BTreeSet::new();
    let mut external = BTreeSet::new();
    let mut snapshots = BTreeSet::new();
    let mut raw: Vec<EdgeRow> = Vec::new();
    for snap in deduped {
        let Some(ex) = extract_entities(snap, catalog).unwrap() else {
            continue;
        };
        let during = stategraph_rca::TimeRange::new(snap.t_min, snap.t_max);
        let primary = index.canonicalize(&ex.primary, Some(during)).unwrap();
        let pk = primary.key();
        entities.insert(pk.clone());
        if catalog.is_external(&primary.kind) {
            external.insert(pk.clone());
        }
        snapshots.insert((pk.clone(), snap.t_min, snap.t_max));
        let own = if primary.kind == "Event" {
            EdgeType::HasEvent
        } else {
            EdgeType::HasState
        };
        raw.push((
            Node::Entity(pk.clone()),
            Node::Snapshot(pk.clone(), snap.t_min),
            own,
            "metadata_uid".into(),
            snap.t_min,
            snap.t_max,
        ));
        for re in ex.references {
            let target = index.canonicalize(&re.target, Some(during)).unwrap();
            entities.insert(target.key());
            if catalog.is_external(&target.kind) {
                external.insert(target.key());
            }
            raw.push((
                Node::Entity(pk.clone()),
                Node::Entity(target.key()),
                re.edge_type,
                re.key.to_string(),
                snap.t_min,
                snap.t_max,
            ));
        }
    }
    let mut merged: BTreeMap<(Node, Node, EdgeType, String), (Timestamp, Timestamp)> = BTreeMap::new();
    for (a, b, t, k, lo, hi) in raw {
        let slot = merged.entry((a, b, t, k)).or_insert((lo, hi));
        slot.0 = slot.0.min(lo);
        slot.1 = slot.1.max(hi);
    }
    let edges = merged
        .into_iter()
        .map(|((a, b, t, k), (lo, hi))| (a, b, t, k, lo, hi))
        .collect();
    GraphSummary {
        entities,
        external,
        snapshots,
        edges,
    }
}

/// Edge-type endpoint rules checked from the outside.
pub fn edge_type_violations(graph: &StateGraph) -> Vec<String> {
    let mut out = Vec::new();
    for e in graph.edges() {
        let (src, dst) = (graph.vertex(&e.src).unwrap(), graph.vertex(&e.dst).unwrap());
        let ok = match e.edge_type {
            EdgeType::ReferInternal => {
                matches!((src, dst), (Vertex::Entity(a), Vertex::Entity(b)) if !a.external && !b.external)
            }
            EdgeType::UseExternal => {
                matches!((src, dst), (Vertex::Entity(a), Vertex::Entity(b)) if !a.external && b.external)
            }
            EdgeType::HasState => {
                matches!((src, dst), (Vertex::Entity(a), Vertex::Snapshot(s)) if a.entity.kind != "Event" && s.owner == a.entity)
            }
            EdgeType::HasEvent => {
                matches!((src, dst), (Vertex::Entity(a), Vertex::Snapshot(s)) if a.entity.kind == "Event" && s.owner == a.entity)
            }
        };
        if !ok || e.t_min > e.t_max {
            out.push(e.to_string());
        }
    }
    out
}

// ---------------------------------------------------------------- query oracle

/// Nested-loop join: one table of admissible edges per step, joined on the
/// shared vertex by scanning every pair. Uses no adjacency index.
pub fn join_oracle(plan: &QueryPlan, graph: &StateGraph) -> Vec<(Vec<VertexId>, Vec<EdgeKey>)> {
    match graph.vertex(&plan.anchor_vertex) {
        Some(Vertex::Snapshot(s)) if s.owner == plan.anchor && s.owner.kind == "Event" => {}
        _ => return Vec::new(),
    }
    let window = Duration::seconds(plan.window_secs);
    let all: Vec<_> = graph.edges().collect();
    let kind = |id: &VertexId| graph.vertex(id).map(|v| v.kind().to_owned());
    let mut rows: Vec<(Vec<VertexId>, Vec<EdgeKey>)> = vec![(vec![plan.anchor_vertex.clone()], Vec::new())];
    for step in &plan.steps {
        let table: Vec<(VertexId, VertexId, EdgeKey)> = all
            .iter()
            .filter(|e| {
                e.edge_type == step.edge_type
                    && e.key == step.key
                    && kind(&e.src).as_deref() == Some(step.src_kind.as_str())
                    && kind(&e.dst).as_deref() == Some(step.dst_kind.as_str())
                    && e.t_min - window <= plan.at
                    && plan.at <= e.t_max + window
            })
            .map(|e| match step.direction {
                Direction::Forward => (e.src.clone(), e.dst.clone(), e.identity()),
                Direction::Reverse => (e.dst.clone(), e.src.clone(), e.identity()),
            })
            .collect();
        let mut next = Vec::new();
        for (verts, edges) in &rows {
            for (from, to, key) in &table {
                if verts.last() == Some(from) {
                    let mut v = verts.clone();
                    v.push(to.clone());
                    let mut es = edges.clone();
                    es.push(key.clone());
                    next.push((v, es));
                }
            }
        }
        rows = next;
    }
    rows.sort();
    rows
}

/// Plans over every Event anchor of a graph: each metapath found from the
/// involved kind to every other entity kind, at a few evaluation times.
pub fn random_plans(r: &mut ChaCha8Rng, prepared: &PreparedGraphs, max_plans: usize) -> Vec<QueryPlan> {
    let graph = &prepared.graph;
    let kinds = prepared.meta.entity_kinds();
    let mut plans = Vec::new();
    let events: Vec<_> = graph
        .snapshots()
        .filter(|(_, s)| s.owner.kind == "Event")
        .map(|(id, s)| (id.clone(), s.clone()))
        .collect();
    for (vid, snap) in events.choose_multiple(r, 4) {
        let src = snap.state_json["involvedObject"]["kind"]
            .as_str()
            .unwrap_or("Pod")
            .to_owned();
        for dest in &kinds {
            if *dest == src || dest == "Event" {
                continue;
            }
            let Ok(paths) = find_metapaths(&prepared.meta, &src, dest, &[], &MetapathLimits::default())
            else {
                continue;
            };
            for p in paths.iter().take(3) {
                let ext = extend_metapath(&p.path, &src);
                let at = t0() + Duration::minutes(r.gen_range(-10..50));
                let window = *[0i64, 120, 900, 3600].choose(r).unwrap();
                plans.push(compile_plan(&ext, &snap.owner, vid, at, window).unwrap());
                if plans.len() >= max_plans {
                    return plans;
                }
            }
        }
    }
    plans
}
