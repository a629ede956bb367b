//! The temporal StateGraph: entity vertices, snapshot vertices and the four
//! edge types, each edge carrying its key and a consolidated validity range.
//!
//! A graph is assembled once by [`build_state_graph`] (or reloaded with
//! [`StateGraph::from_json`]) and is read-only afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use chrono::Duration;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tracing::warn;

use crate::driver::Incident;
use crate::entity::{
    extract_entities, EdgeType, EntityError, EntityKeyCatalog, EntityRef, FlatKey, Identity, IdentityIndex,
};
use crate::ingest::DedupedSnapshot;
use crate::time::{format_timestamp, TimeRange, Timestamp};

/// Key carried by every HasState and HasEvent edge.
pub const SNAPSHOT_EDGE_KEY: &str = "metadata_uid";

/// Kind whose snapshots are linked with HasEvent instead of HasState.
pub const EVENT_KIND: &str = "Event";

pub fn snapshot_edge_key() -> FlatKey {
    FlatKey::new(SNAPSHOT_EDGE_KEY).expect("static key")
}

/// Snapshot label for a kind: `Pod` -> `POD`.
pub fn snapshot_label(kind: &str) -> String {
    kind.to_uppercase()
}

#[derive(Debug, thiserror::Error)]
pub enum StateGraphError {
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error("cannot consolidate edges with different identities: {0} vs {1}")]
    EdgeMismatch(String, String),
    #[error("edge {edge} violates the {edge_type} endpoint rule: {detail}")]
    EdgeConstraint {
        edge: String,
        edge_type: EdgeType,
        detail: String,
    },
    #[error("no Event matches the incident message in namespace {namespace}; {}", .diagnostics.join("; "))]
    IncidentNotFound {
        namespace: String,
        diagnostics: Vec<String>,
    },
    #[error("graph document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(String);

impl VertexId {
    pub fn entity(entity: &EntityRef) -> Self {
        VertexId(entity.key())
    }

    fn snapshot(owner: &EntityRef, t_min: &Timestamp) -> Self {
        VertexId(format!(
            "{}@{}@{}",
            snapshot_label(&owner.kind),
            owner.key(),
            format_timestamp(t_min)
        ))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityVertex {
    pub entity: EntityRef,
    pub external: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotVertex {
    pub owner: EntityRef,
    /// Uppercased owner kind, e.g. `POD`, `RESOURCEQUOTA`, `EVENT`.
    pub label: String,
    pub t_min: Timestamp,
    pub t_max: Timestamp,
    pub state_json: Map<String, Value>,
}

impl SnapshotVertex {
    pub fn range(&self) -> TimeRange {
        TimeRange::new(self.t_min, self.t_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "vertex", rename_all = "snake_case")]
pub enum Vertex {
    Entity(EntityVertex),
    Snapshot(SnapshotVertex),
}

impl Vertex {
    /// Entity kind, or the uppercase label for snapshots.
    pub fn kind(&self) -> &str {
        match self {
            Vertex::Entity(e) => &e.entity.kind,
            Vertex::Snapshot(s) => &s.label,
        }
    }

    pub fn as_entity(&self) -> Option<&EntityVertex> {
        match self {
            Vertex::Entity(e) => Some(e),
            Vertex::Snapshot(_) => None,
        }
    }

    pub fn as_snapshot(&self) -> Option<&SnapshotVertex> {
        match self {
            Vertex::Snapshot(s) => Some(s),
            Vertex::Entity(_) => None,
        }
    }
}

/// Identity tuple of an edge; at most one edge exists per key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub src: VertexId,
    pub dst: VertexId,
    pub edge_type: EdgeType,
    pub key: FlatKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: VertexId,
    pub dst: VertexId,
    pub edge_type: EdgeType,
    pub key: FlatKey,
    pub t_min: Timestamp,
    pub t_max: Timestamp,
}

impl Edge {
    pub fn identity(&self) -> EdgeKey {
        EdgeKey {
            src: self.src.clone(),
            dst: self.dst.clone(),
            edge_type: self.edge_type,
            key: self.key.clone(),
        }
    }

    pub fn range(&self) -> TimeRange {
        TimeRange::new(self.t_min, self.t_max)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} -[{} {}]-> {}",
            self.src, self.edge_type, self.key, self.dst
        )
    }
}

/// Merge two observations of the same edge into their time envelope.
pub fn consolidate_edge(existing: &Edge, incoming: &Edge) -> Result<Edge, StateGraphError> {
    if existing.identity() != incoming.identity() {
        return Err(StateGraphError::EdgeMismatch(
            existing.to_string(),
            incoming.to_string(),
        ));
    }
    let range = existing.range().envelope(&incoming.range());
    Ok(Edge {
        t_min: range.t_min,
        t_max: range.t_max,
        ..existing.clone()
    })
}

type KindIndexKey = (String, String, EdgeType, FlatKey);

#[derive(Debug, Clone, Default)]
pub struct StateGraph {
    vertices: BTreeMap<VertexId, Vertex>,
    edges: BTreeMap<EdgeKey, Edge>,
    out_index: BTreeMap<VertexId, Vec<EdgeKey>>,
    in_index: BTreeMap<VertexId, Vec<EdgeKey>>,
    kind_index: BTreeMap<KindIndexKey, Vec<EdgeKey>>,
}

impl StateGraph {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, id: &VertexId) -> Option<&Vertex> {
        self.vertices.get(id)
    }

    pub fn vertices(&self) -> impl Iterator<Item = (&VertexId, &Vertex)> {
        self.vertices.iter()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn edge(&self, key: &EdgeKey) -> Option<&Edge> {
        self.edges.get(key)
    }

    pub fn kind_of(&self, id: &VertexId) -> Option<&str> {
        self.vertices.get(id).map(Vertex::kind)
    }

    pub fn entity(&self, entity: &EntityRef) -> Option<&EntityVertex> {
        self.vertices
            .get(&VertexId::entity(entity))
            .and_then(Vertex::as_entity)
    }

    pub fn entities(&self) -> impl Iterator<Item = (&VertexId, &EntityVertex)> {
        self.vertices
            .iter()
            .filter_map(|(id, v)| v.as_entity().map(|e| (id, e)))
    }

    pub fn snapshots(&self) -> impl Iterator<Item = (&VertexId, &SnapshotVertex)> {
        self.vertices
            .iter()
            .filter_map(|(id, v)| v.as_snapshot().map(|s| (id, s)))
    }

    pub fn out_edges(&self, id: &VertexId) -> impl Iterator<Item = &Edge> {
        self.out_index
            .get(id)
            .into_iter()
            .flatten()
            .map(|k| &self.edges[k])
    }

    pub fn in_edges(&self, id: &VertexId) -> impl Iterator<Item = &Edge> {
        self.in_index
            .get(id)
            .into_iter()
            .flatten()
            .map(|k| &self.edges[k])
    }

    /// Edges whose endpoint kinds, type and key match exactly.
    pub fn edges_by_kinds(
        &self,
        src_kind: &str,
        dst_kind: &str,
        edge_type: EdgeType,
        key: &FlatKey,
    ) -> impl Iterator<Item = &Edge> {
        self.kind_index
            .get(&(src_kind.to_owned(), dst_kind.to_owned(), edge_type, key.clone()))
            .into_iter()
            .flatten()
            .map(|k| &self.edges[k])
    }

    /// Snapshot vertices linked from an entity, ordered by `t_min`.
    pub fn snapshots_of(&self, entity: &EntityRef) -> Vec<&SnapshotVertex> {
        let mut out: Vec<&SnapshotVertex> = self
            .out_edges(&VertexId::entity(entity))
            .filter(|e| e.edge_type.is_snapshot_edge())
            .filter_map(|e| self.vertices.get(&e.dst).and_then(Vertex::as_snapshot))
            .collect();
        out.sort_by_key(|s| (s.t_min, s.t_max));
        out
    }

    /// State of `entity` at `at`: the snapshot whose range contains `at`,
    /// else the one with the greatest `t_max <= at`, else `None`.
    pub fn latest_state(&self, entity: &EntityRef, at: Timestamp) -> Option<&SnapshotVertex> {
        let snaps = self.snapshots_of(entity);
        snaps
            .iter()
            .filter(|s| s.range().contains(at))
            .max_by_key(|s| s.t_min)
            .or_else(|| snaps.iter().filter(|s| s.t_max <= at).max_by_key(|s| s.t_max))
            .copied()
    }

    /// Edges violating the per-type endpoint rules, or whose endpoints are
    /// missing. Empty for every graph produced by this module.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for edge in self.edges.values() {
            let (Some(src), Some(dst)) = (self.vertices.get(&edge.src), self.vertices.get(&edge.dst)) else {
                out.push(format!("dangling edge {edge}"));
                continue;
            };
            if edge.t_min > edge.t_max {
                out.push(format!("inverted range on {edge}"));
            }
            if let Err(e) = check_edge_endpoints(edge, src, dst) {
                out.push(e.to_string());
            }
        }
        out
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            vertices: self
                .vertices
                .iter()
                .map(|(id, v)| VertexRecord {
                    id: id.clone(),
                    vertex: v.clone(),
                })
                .collect(),
            edges: self.edges.values().cloned().collect(),
        }
    }

    /// Deterministic JSON export; identical graphs give identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StateGraphError> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| StateGraphError::Document(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self, StateGraphError> {
        let mut b = Builder::default();
        for rec in doc.vertices {
            if b.graph.vertices.insert(rec.id.clone(), rec.vertex).is_some() {
                return Err(StateGraphError::Document(format!("duplicate vertex {}", rec.id)));
            }
        }
        for edge in doc.edges {
            for end in [&edge.src, &edge.dst] {
                if !b.graph.vertices.contains_key(end) {
                    return Err(StateGraphError::Document(format!(
                        "edge {edge} references missing vertex {end}"
                    )));
                }
            }
            b.insert_edge(edge)?;
        }
        Ok(b.finish())
    }

    /// One Cypher `CREATE` statement per vertex and per edge.
    pub fn to_cypher(&self) -> String {
        let mut out = String::new();
        for (id, v) in &self.vertices {
            let mut props = vec![("vid".to_owned(), id.as_str().to_owned())];
            let labels = match v {
                Vertex::Entity(e) => {
                    props.push(("kind".into(), e.entity.kind.clone()));
                    match &e.entity.identity {
                        Identity::Uid(u) => props.push(("uid".into(), u.clone())),
                        Identity::Name { .. } => {}
                        Identity::Composite(fields) => {
                            props.extend(fields.iter().map(|(k, v)| (k.clone(), v.clone())))
                        }
                    }
                    if let Some(n) = &e.entity.name {
                        props.push(("name".into(), n.clone()));
                    }
                    if let Some(ns) = &e.entity.namespace {
                        props.push(("namespace".into(), ns.clone()));
                    }
                    e.entity.kind.clone()
                }
                Vertex::Snapshot(s) => {
                    props.push(("owner".into(), s.owner.key()));
                    props.push(("t_min".into(), format_timestamp(&s.t_min)));
                    props.push(("t_max".into(), format_timestamp(&s.t_max)));
                    props.push((
                        "state_json".into(),
                        serde_json::to_string(&s.state_json).expect("json"),
                    ));
                    s.label.clone()
                }
            };
            out.push_str(&format!(
                "CREATE (:{} {});\n",
                cypher_ident(&labels),
                cypher_props(&props)
            ));
        }
        for e in self.edges.values() {
            let props = [
                ("key".to_owned(), e.key.to_string()),
                ("t_min".to_owned(), format_timestamp(&e.t_min)),
                ("t_max".to_owned(), format_timestamp(&e.t_max)),
            ];
            out.push_str(&format!(
                "MATCH (a {{vid: {}}}), (b {{vid: {}}}) CREATE (a)-[:{} {}]->(b);\n",
                cypher_string(e.src.as_str()),
                cypher_string(e.dst.as_str()),
                e.edge_type,
                cypher_props(&props)
            ));
        }
        out
    }
}

fn cypher_ident(s: &str) -> String {
    if s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        s.to_owned()
    } else {
        format!("`{}`", s.replace('`', "``"))
    }
}

pub(crate) fn cypher_string(s: &str) -> String {
    format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))
}

fn cypher_props(props: &[(String, String)]) -> String {
    let inner: Vec<String> = props
        .iter()
        .map(|(k, v)| format!("{}: {}", cypher_ident(k), cypher_string(v)))
        .collect();
    format!("{{{}}}", inner.join(", "))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: VertexId,
    #[serde(flatten)]
    pub vertex: Vertex,
}

/// Serialized form of a graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDocument {
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<Edge>,
}

fn check_edge_endpoints(edge: &Edge, src: &Vertex, dst: &Vertex) -> Result<(), StateGraphError> {
    let fail = |detail: &str| {
        Err(StateGraphError::EdgeConstraint {
            edge: edge.to_string(),
            edge_type: edge.edge_type,
            detail: detail.to_owned(),
        })
    };
    let native = |v: &Vertex| matches!(v, Vertex::Entity(e) if !e.external);
    let external = |v: &Vertex| matches!(v, Vertex::Entity(e) if e.external);
    match edge.edge_type {
        EdgeType::ReferInternal if !(native(src) && native(dst)) => {
            fail("both endpoints must be native entities")
        }
        EdgeType::UseExternal if !(native(src) && external(dst)) => {
            fail("source must be native and target external")
        }
        EdgeType::HasEvent => match (src, dst) {
            (Vertex::Entity(e), Vertex::Snapshot(s))
                if e.entity.kind == EVENT_KIND && s.owner == e.entity =>
            {
                Ok(())
            }
            _ => fail("must link an Event entity to its own EVENT snapshot"),
        },
        EdgeType::HasState => match (src, dst) {
            (Vertex::Entity(e), Vertex::Snapshot(s))
                if e.entity.kind != EVENT_KIND && s.owner == e.entity =>
            {
                Ok(())
            }
            _ => fail("must link a non-Event entity to its own snapshot"),
        },
        _ => Ok(()),
    }
}

#[derive(Default)]
struct Builder {
    graph: StateGraph,
}

impl Builder {
    fn add_entity(&mut self, entity: &EntityRef, external: bool) -> VertexId {
        let id = VertexId::entity(entity);
        match self.graph.vertices.get_mut(&id) {
            Some(Vertex::Entity(existing)) => existing.entity.absorb_hints(entity),
            Some(Vertex::Snapshot(_)) => unreachable!("entity and snapshot ids never collide"),
            None => {
                let mut entity = entity.clone();
                entity.unresolved = entity.unresolved && matches!(entity.identity, Identity::Name { .. });
                self.graph
                    .vertices
                    .insert(id.clone(), Vertex::Entity(EntityVertex { entity, external }));
            }
        }
        id
    }

    fn add_snapshot(&mut self, owner: &EntityRef, snap: &DedupedSnapshot) -> VertexId {
        let base = VertexId::snapshot(owner, &snap.t_min);
        let mut id = base.clone();
        let mut n = 2;
        while self.graph.vertices.contains_key(&id) {
            id = VertexId(format!("{base}#{n}"));
            n += 1;
        }
        self.graph.vertices.insert(
            id.clone(),
            Vertex::Snapshot(SnapshotVertex {
                owner: owner.clone(),
                label: snapshot_label(&owner.kind),
                t_min: snap.t_min,
                t_max: snap.t_max,
                state_json: snap.payload.clone(),
            }),
        );
        id
    }

    fn insert_edge(&mut self, edge: Edge) -> Result<(), StateGraphError> {
        let src = &self.graph.vertices[&edge.src];
        let dst = &self.graph.vertices[&edge.dst];
        check_edge_endpoints(&edge, src, dst)?;
        let key = edge.identity();
        match self.graph.edges.get_mut(&key) {
            Some(existing) => *existing = consolidate_edge(existing, &edge)?,
            None => {
                self.graph.edges.insert(key, edge);
            }
        }
        Ok(())
    }

    fn finish(mut self) -> StateGraph {
        let g = &mut self.graph;
        for (key, edge) in &g.edges {
            g.out_index.entry(edge.src.clone()).or_default().push(key.clone());
            g.in_index.entry(edge.dst.clone()).or_default().push(key.clone());
            let kinds = (
                g.vertices[&edge.src].kind().to_owned(),
                g.vertices[&edge.dst].kind().to_owned(),
                edge.edge_type,
                edge.key.clone(),
            );
            g.kind_index.entry(kinds).or_default().push(key.clone());
        }
        self.graph
    }
}

/// Assemble the graph from deduplicated snapshots.
///
/// Each snapshot contributes its primary entity, one snapshot vertex, a
/// HasState (HasEvent for Events) edge and one edge per extracted reference,
/// all stamped with the snapshot's time range. Repeated edges are
/// consolidated into their time envelope.
pub fn build_state_graph(
    deduped: &[DedupedSnapshot],
    catalog: &EntityKeyCatalog,
) -> Result<StateGraph, StateGraphError> {
    let index = IdentityIndex::build(deduped);
    let snapshot_key = snapshot_edge_key();
    let mut b = Builder::default();
    for snap in deduped {
        let Some(ex) = extract_entities(snap, catalog)? else {
            continue;
        };
        let during = TimeRange::new(snap.t_min, snap.t_max);
        let primary = index.canonicalize(&ex.primary, Some(during))?;
        let primary_id = b.add_entity(&primary, catalog.is_external(&primary.kind));
        let snap_id = b.add_snapshot(&primary, snap);
        b.insert_edge(Edge {
            src: primary_id.clone(),
            dst: snap_id,
            edge_type: if primary.kind == EVENT_KIND {
                EdgeType::HasEvent
            } else {
                EdgeType::HasState
            },
            key: snapshot_key.clone(),
            t_min: snap.t_min,
            t_max: snap.t_max,
        })?;
        for r in ex.references {
            let target = index.canonicalize(&r.target, Some(during))?;
            let target_id = b.add_entity(&target, catalog.is_external(&target.kind));
            b.insert_edge(Edge {
                src: primary_id.clone(),
                dst: target_id,
                edge_type: r.edge_type,
                key: r.key,
                t_min: snap.t_min,
                t_max: snap.t_max,
            })?;
        }
    }
    Ok(b.finish())
}

/// Incident-to-Event matching parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub window_secs: i64,
    /// Retry on decoration-stripped messages when no exact match exists.
    pub normalize: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            window_secs: 15 * 60,
            normalize: true,
        }
    }
}

/// Strip event aggregation decorations and collapse whitespace.
pub fn normalize_message(msg: &str) -> String {
    static DECORATIONS: OnceLock<Regex> = OnceLock::new();
    let re = DECORATIONS.get_or_init(|| {
        Regex::new(r"\(repeated \d+ times?\)|\(combined from similar events\):?").expect("regex")
    });
    re.replace_all(msg, " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventMatch {
    pub event: EntityRef,
    pub event_vertex: VertexId,
    pub event_state: SnapshotVertex,
    /// Kind of the Event's involved object.
    pub src_kind: String,
    /// The involved object itself, when the Event names it by uid.
    pub src_entity: Option<EntityRef>,
    pub normalized: bool,
    pub distance_secs: i64,
}

fn event_namespace(state: &Map<String, Value>) -> Option<&str> {
    fn ns(v: Option<&Value>) -> Option<&str> {
        v.and_then(|m| m.get("namespace")).and_then(Value::as_str)
    }
    ns(state.get("metadata")).or_else(|| ns(state.get("involvedObject")))
}

/// Find the EVENT snapshot that records the incident.
pub fn match_incident_event(
    graph: &StateGraph,
    incident: &Incident,
    config: &MatchConfig,
) -> Result<EventMatch, StateGraphError> {
    let window = Duration::seconds(config.window_secs);
    let events: Vec<(&VertexId, &SnapshotVertex)> = graph
        .snapshots()
        .filter(|(_, s)| s.owner.kind == EVENT_KIND)
        .collect();
    let message_of = |s: &SnapshotVertex| {
        s.state_json
            .get("message")
            .and_then(Value::as_str)
            .map(str::to_owned)
    };

    let mut passes: Vec<(bool, Box<dyn Fn(&str) -> bool>)> = Vec::new();
    let exact = incident.message.clone();
    passes.push((false, Box::new(move |m: &str| m == exact)));
    if config.normalize {
        let target = normalize_message(&incident.message);
        passes.push((true, Box::new(move |m: &str| normalize_message(m) == target)));
    }

    let mut near_misses = Vec::new();
    for (normalized, matches) in &passes {
        let mut hits: Vec<(i64, &VertexId, &SnapshotVertex)> = Vec::new();
        for (id, s) in &events {
            let Some(msg) = message_of(s) else { continue };
            if !matches(&msg) {
                continue;
            }
            let ns = event_namespace(&s.state_json);
            let distance = s.range().distance_secs(incident.timestamp);
            if ns != Some(incident.namespace.as_str()) {
                near_misses.push(format!(
                    "{id} has the message but namespace {}",
                    ns.unwrap_or("<none>")
                ));
                continue;
            }
            if !s.range().within_window(incident.timestamp, window) {
                near_misses.push(format!(
                    "{id} has the message but lies {distance}s from the incident time (window {}s)",
                    config.window_secs
                ));
                continue;
            }
            hits.push((distance, id, s));
        }
        hits.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let Some(&(distance, id, state)) = hits.first() else {
            continue;
        };
        if hits.get(1).is_some_and(|h| h.0 == distance) {
            warn!(chosen = %id, "several Events match the incident at equal distance");
        }
        let involved = state.state_json.get("involvedObject").and_then(Value::as_object);
        let src_kind = involved
            .and_then(|o| o.get("kind"))
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_owned();
        let src_entity = graph
            .out_edges(&VertexId::entity(&state.owner))
            .find(|e| e.edge_type == EdgeType::ReferInternal && e.key == "involvedObject_uid")
            .and_then(|e| graph.vertex(&e.dst))
            .and_then(Vertex::as_entity)
            .map(|e| e.entity.clone());
        return Ok(EventMatch {
            event: state.owner.clone(),
            event_vertex: id.clone(),
            event_state: state.clone(),
            src_kind,
            src_entity,
            normalized: *normalized,
            distance_secs: distance,
        });
    }

    let mut diagnostics = vec![format!("{} Event snapshots scanned", events.len())];
    near_misses.sort();
    near_misses.dedup();
    diagnostics.extend(near_misses.into_iter().take(5));
    if diagnostics.len() == 1 {
        let target = normalize_message(&incident.message);
        if let Some((id, msg)) = events
            .iter()
            .filter_map(|(id, s)| message_of(s).map(|m| (*id, m)))
            .max_by_key(|(id, m)| {
                (
                    common_prefix(&normalize_message(m), &target),
                    std::cmp::Reverse((*id).clone()),
                )
            })
        {
            diagnostics.push(format!("closest message on {id}: {msg:?}"));
        }
    }
    Err(StateGraphError::IncidentNotFound {
        namespace: incident.namespace.clone(),
        diagnostics,
    })
}

fn common_prefix(a: &str, b: &str) -> usize {
    a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count()
}

/// Kinds seen as entity vertices, split into native and external.
pub fn entity_kinds(graph: &StateGraph) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut native = BTreeSet::new();
    let mut external = BTreeSet::new();
    for (_, e) in graph.entities() {
        if e.external {
            external.insert(e.entity.kind.clone());
        } else {
            native.insert(e.entity.kind.clone());
        }
    }
    (native, external)
}
