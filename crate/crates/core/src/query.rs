//! Metapath query plans, their execution into statepaths, state retrieval
//! and Cypher text.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use chrono::Duration;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::entity::{EdgeType, EntityRef, FlatKey};
use crate::metagraph::{Direction, Metapath};
use crate::stategraph::{cypher_string, EdgeKey, StateGraph, Vertex, VertexId, EVENT_KIND};
use crate::time::{TimeRange, Timestamp};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QueryError {
    #[error("metapath is empty")]
    EmptyPath,
    #[error("metapath does not start with the EVENT -> Event prefix")]
    NotExtended,
    #[error("Cypher text: {0}")]
    Cypher(String),
}

/// Edge constraint for one metapath step. `src_kind`/`dst_kind` are the
/// edge's own endpoint kinds; `direction` says which way the walk uses it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepConstraint {
    pub edge_type: EdgeType,
    pub key: FlatKey,
    pub direction: Direction,
    pub src_kind: String,
    pub dst_kind: String,
}

impl StepConstraint {
    fn from_kind(&self) -> &str {
        match self.direction {
            Direction::Forward => &self.src_kind,
            Direction::Reverse => &self.dst_kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    /// The Event entity matched to the incident.
    pub anchor: EntityRef,
    /// Its EVENT snapshot, where the walk starts.
    pub anchor_vertex: VertexId,
    pub steps: Vec<StepConstraint>,
    pub at: Timestamp,
    pub window_secs: i64,
    pub binding: Metapath,
}

impl QueryPlan {
    /// Whether an edge's range admits the evaluation time.
    pub fn admits(&self, range: &TimeRange) -> bool {
        range.within_window(self.at, Duration::seconds(self.window_secs))
    }
}

pub const DEFAULT_QUERY_WINDOW_SECS: i64 = 15 * 60;

pub fn compile_plan(
    path: &Metapath,
    anchor: &EntityRef,
    anchor_vertex: &VertexId,
    at: Timestamp,
    window_secs: i64,
) -> Result<QueryPlan, QueryError> {
    if path.is_empty() {
        return Err(QueryError::EmptyPath);
    }
    if !path.is_extended() {
        return Err(QueryError::NotExtended);
    }
    let steps = path
        .steps
        .iter()
        .map(|s| StepConstraint {
            edge_type: s.edge_type,
            key: s.key.clone(),
            direction: s.direction,
            src_kind: s.src_kind.clone(),
            dst_kind: s.dest_kind.clone(),
        })
        .collect();
    Ok(QueryPlan {
        anchor: anchor.clone(),
        anchor_vertex: anchor_vertex.clone(),
        steps,
        at,
        window_secs,
        binding: path.clone(),
    })
}

/// One instantiation of a metapath.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statepath {
    pub event: EntityRef,
    pub event_vertex: VertexId,
    /// Every bound vertex in walk order, starting at the EVENT snapshot.
    pub vertices: Vec<VertexId>,
    pub edges: Vec<EdgeKey>,
    /// Entity vertices from srcKind onward; no snapshot vertices.
    pub entities: Vec<EntityRef>,
    pub binding: Metapath,
}

impl Statepath {
    pub fn display(&self) -> String {
        self.entities
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" -> ")
    }
}

fn anchor_ok(plan: &QueryPlan, graph: &StateGraph) -> bool {
    matches!(
        graph.vertex(&plan.anchor_vertex),
        Some(Vertex::Snapshot(s)) if s.owner == plan.anchor && s.owner.kind == EVENT_KIND
    ) && plan
        .steps
        .first()
        .is_some_and(|s| graph.kind_of(&plan.anchor_vertex) == Some(s.from_kind()))
}

/// Every binding of the plan, ordered by the bound vertex ids.
pub fn execute_plan(plan: &QueryPlan, graph: &StateGraph) -> Vec<Statepath> {
    if !anchor_ok(plan, graph) {
        return Vec::new();
    }
    let mut partials: Vec<(Vec<VertexId>, Vec<EdgeKey>)> =
        vec![(vec![plan.anchor_vertex.clone()], Vec::new())];
    for step in &plan.steps {
        let mut next = Vec::new();
        for (verts, edges) in &partials {
            let current = verts.last().expect("non-empty");
            let candidates: Box<dyn Iterator<Item = _>> = match step.direction {
                Direction::Forward => Box::new(graph.out_edges(current)),
                Direction::Reverse => Box::new(graph.in_edges(current)),
            };
            for e in candidates {
                if e.edge_type != step.edge_type || e.key != step.key || !plan.admits(&e.range()) {
                    continue;
                }
                if graph.kind_of(&e.src) != Some(step.src_kind.as_str())
                    || graph.kind_of(&e.dst) != Some(step.dst_kind.as_str())
                {
                    continue;
                }
                let to = match step.direction {
                    Direction::Forward => &e.dst,
                    Direction::Reverse => &e.src,
                };
                let mut v = verts.clone();
                v.push(to.clone());
                let mut es = edges.clone();
                es.push(e.identity());
                next.push((v, es));
            }
        }
        partials = next;
        if partials.is_empty() {
            return Vec::new();
        }
    }
    partials.sort();
    partials.dedup();
    partials
        .into_iter()
        .map(|(vertices, edges)| to_statepath(plan, graph, vertices, edges))
        .collect()
}

pub(crate) fn to_statepath(
    plan: &QueryPlan,
    graph: &StateGraph,
    vertices: Vec<VertexId>,
    edges: Vec<EdgeKey>,
) -> Statepath {
    let entities = vertices
        .iter()
        .skip(2)
        .filter_map(|v| graph.vertex(v).and_then(Vertex::as_entity))
        .map(|e| e.entity.clone())
        .collect();
    Statepath {
        event: plan.anchor.clone(),
        event_vertex: plan.anchor_vertex.clone(),
        vertices,
        edges,
        entities,
        binding: plan.binding.clone(),
    }
}

/// Whether a statepath satisfies every constraint of the plan.
pub fn satisfies(plan: &QueryPlan, graph: &StateGraph, path: &Statepath) -> bool {
    if path.edges.len() != plan.steps.len() || path.vertices.len() != plan.steps.len() + 1 {
        return false;
    }
    if path.vertices[0] != plan.anchor_vertex || !anchor_ok(plan, graph) {
        return false;
    }
    plan.steps.iter().enumerate().all(|(i, step)| {
        let Some(e) = graph.edge(&path.edges[i]) else {
            return false;
        };
        let (from, to) = match step.direction {
            Direction::Forward => (&e.src, &e.dst),
            Direction::Reverse => (&e.dst, &e.src),
        };
        e.edge_type == step.edge_type
            && e.key == step.key
            && plan.admits(&e.range())
            && graph.kind_of(&e.src) == Some(step.src_kind.as_str())
            && graph.kind_of(&e.dst) == Some(step.dst_kind.as_str())
            && *from == path.vertices[i]
            && *to == path.vertices[i + 1]
    })
}

/// A sub-object of a StateJSON addressed by JSON pointer (`""` is the whole
/// document).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub pointer: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub entity: EntityRef,
    /// Snapshot label, e.g. `RESOURCEQUOTA`.
    pub label: String,
    /// Range of the chosen snapshot; `None` when absent.
    pub range: Option<TimeRange>,
    pub fragments: Vec<Fragment>,
    pub absent: bool,
}

impl StateEntry {
    pub fn fragment(&self, pointer: &str) -> Option<&Value> {
        self.fragments
            .iter()
            .find(|f| f.pointer == pointer)
            .map(|f| &f.value)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StateBundle {
    pub entries: Vec<StateEntry>,
}

impl StateBundle {
    pub fn absences(&self) -> impl Iterator<Item = &StateEntry> {
        self.entries.iter().filter(|e| e.absent)
    }

    pub fn present(&self) -> impl Iterator<Item = &StateEntry> {
        self.entries.iter().filter(|e| !e.absent)
    }
}

/// `spec` and `status` fragments of a state, or the whole payload when it
/// has neither.
pub fn state_fragments(state: &Map<String, Value>) -> Vec<Fragment> {
    let picked: Vec<Fragment> = ["spec", "status"]
        .into_iter()
        .filter_map(|f| {
            state.get(f).map(|v| Fragment {
                pointer: format!("/{f}"),
                value: v.clone(),
            })
        })
        .collect();
    if picked.is_empty() {
        vec![Fragment {
            pointer: String::new(),
            value: Value::Object(state.clone()),
        }]
    } else {
        picked
    }
}

pub fn fetch_states(statepath: &Statepath, graph: &StateGraph, at: Timestamp) -> StateBundle {
    let entries = statepath
        .entities
        .iter()
        .map(|entity| {
            let entity = graph
                .entity(entity)
                .map(|v| v.entity.clone())
                .unwrap_or_else(|| entity.clone());
            let label = crate::stategraph::snapshot_label(&entity.kind);
            match graph.latest_state(&entity, at) {
                Some(s) => StateEntry {
                    range: Some(s.range()),
                    fragments: state_fragments(&s.state_json),
                    absent: false,
                    label,
                    entity,
                },
                None => StateEntry {
                    range: None,
                    fragments: Vec::new(),
                    absent: true,
                    label,
                    entity,
                },
            }
        })
        .collect();
    StateBundle { entries }
}

/// Fixed node aliases; other kinds use their lowercased name.
pub fn kind_alias(kind: &str) -> String {
    match kind {
        "PersistentVolume" => "pv".into(),
        "PersistentVolumeClaim" => "pvc".into(),
        "Pod" => "pod".into(),
        "Event" => "e".into(),
        other => {
            let lower: String = other
                .chars()
                .filter(|c| c.is_ascii_alphanumeric() || *c == '_')
                .collect::<String>()
                .to_lowercase();
            if lower.is_empty() || lower.starts_with(|c: char| c.is_ascii_digit()) {
                format!("n{lower}")
            } else {
                lower
            }
        }
    }
}

fn cypher_label(kind: &str) -> String {
    if kind.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        kind.to_owned()
    } else {
        format!("`{}`", kind.replace('`', "``"))
    }
}

/// Cypher text for an extended metapath: one MATCH/WHERE pair per step and a
/// RETURN of every node and relationship alias. The anchor Event's uid is
/// pinned on the first step.
pub fn emit_cypher(path: &Metapath, anchor: &EntityRef) -> Result<String, QueryError> {
    if path.is_empty() {
        return Err(QueryError::EmptyPath);
    }
    let kinds = path.kinds();
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    let aliases: Vec<String> = kinds
        .iter()
        .map(|k| {
            let base = kind_alias(k);
            let n = used.entry(base.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                base
            } else {
                format!("{base}{n}")
            }
        })
        .collect();
    let anchor_pos = kinds.iter().position(|k| *k == EVENT_KIND);

    let mut lines = Vec::new();
    for (i, step) in path.steps.iter().enumerate() {
        let r = format!("r{}", i + 1);
        let (src, dst) = match step.direction {
            Direction::Forward => (i, i + 1),
            Direction::Reverse => (i + 1, i),
        };
        lines.push(format!(
            "MATCH ({}:{})-[{r}:{}]->({}:{})",
            aliases[src],
            cypher_label(&step.src_kind),
            step.edge_type,
            aliases[dst],
            cypher_label(&step.dest_kind)
        ));
        let mut cond = format!("WHERE {r}.key = {}", cypher_string(step.key.as_str()));
        if let (Some(uid), Some(pos)) = (anchor.uid_str(), anchor_pos) {
            if i == pos.saturating_sub(1) {
                cond.push_str(&format!(" AND {}.uid = {}", aliases[pos], cypher_string(uid)));
            }
        }
        lines.push(cond);
    }
    let mut ret: Vec<String> = aliases.clone();
    ret.extend((1..=path.len()).map(|i| format!("r{i}")));
    lines.push(format!("RETURN {}", ret.join(", ")));
    Ok(lines.join("\n") + "\n")
}

/// A relationship pattern recovered from metapath-shaped Cypher text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CypherStep {
    pub src_kind: String,
    pub edge_type: String,
    pub dst_kind: String,
    pub key: String,
}

/// Parse metapath-shaped Cypher: every MATCH must be followed by a WHERE
/// pinning its relationship key, brackets must balance and a RETURN must
/// close the query.
pub fn parse_metapath_cypher(text: &str) -> Result<Vec<CypherStep>, QueryError> {
    static MATCH: OnceLock<Regex> = OnceLock::new();
    static WHERE: OnceLock<Regex> = OnceLock::new();
    let match_re = MATCH.get_or_init(|| {
        Regex::new(
            r"^MATCH\s*\(\s*(\w+)\s*:\s*`?([\w.-]+)`?\s*\)\s*-\s*\[\s*(\w+)\s*:\s*(\w+)\s*\]\s*->\s*\(\s*(\w+)\s*:\s*`?([\w.-]+)`?\s*\)\s*$",
        )
        .expect("regex")
    });
    let where_re = WHERE.get_or_init(|| {
        Regex::new(r"^WHERE\s+(\w+)\.key\s*=\s*'((?:[^'\\]|\\.)*)'(\s+AND\s+.*)?$").expect("regex")
    });
    let err = |m: &str| QueryError::Cypher(m.to_owned());

    let mut depth = [0i32; 3];
    let mut in_str = false;
    let mut escaped = false;
    for c in text.chars() {
        if in_str {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '\'') => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '\'' => in_str = true,
            '(' => depth[0] += 1,
            ')' => depth[0] -= 1,
            '[' => depth[1] += 1,
            ']' => depth[1] -= 1,
            '{' => depth[2] += 1,
            '}' => depth[2] -= 1,
            _ => {}
        }
        if depth.iter().any(|d| *d < 0) {
            return Err(err("unbalanced brackets"));
        }
    }
    if in_str || depth.iter().any(|d| *d != 0) {
        return Err(err("unbalanced brackets or quotes"));
    }

    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("//"))
        .collect();
    let mut steps = Vec::new();
    let mut i = 0;
    let mut returned = false;
    while i < lines.len() {
        let line = lines[i];
        if let Some(c) = match_re.captures(line) {
            let rel = c[3].to_owned();
            let Some(w) = lines.get(i + 1).and_then(|l| where_re.captures(l)) else {
                return Err(err(&format!("MATCH without a key WHERE: {line}")));
            };
            if w[1] != rel {
                return Err(err(&format!("WHERE constrains {} instead of {rel}", &w[1])));
            }
            steps.push(CypherStep {
                src_kind: c[2].to_owned(),
                edge_type: c[4].to_owned(),
                dst_kind: c[6].to_owned(),
                key: w[2].replace("\\'", "'").replace("\\\\", "\\"),
            });
            i += 2;
        } else if line.starts_with("RETURN ") {
            if i + 1 != lines.len() {
                return Err(err("RETURN must be the last clause"));
            }
            returned = true;
            i += 1;
        } else {
            return Err(err(&format!("unexpected clause: {line}")));
        }
    }
    if steps.is_empty() {
        return Err(err("no MATCH clause"));
    }
    if !returned {
        return Err(err("missing RETURN"));
    }
    Ok(steps)
}

/// Whether Cypher text encodes exactly the steps of `path`.
pub fn cypher_matches_metapath(text: &str, path: &Metapath) -> bool {
    let Ok(steps) = parse_metapath_cypher(text) else {
        return false;
    };
    steps.len() == path.len()
        && steps.iter().zip(&path.steps).all(|(c, s)| {
            c.src_kind == s.src_kind
                && c.dst_kind == s.dest_kind
                && c.edge_type == s.edge_type.as_str()
                && c.key == s.key.as_str()
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metagraph::{extend_metapath, Metapath};

    const LISTING: &str = "HasEvent, Event, EVENT, metadata_uid;\n\
ReferInternal, Event, Pod, involvedObject_uid;\n\
ReferInternal, Pod, PersistentVolumeClaim, spec_volumes_persistentVolumeClaim_claimName;\n\
ReferInternal, PersistentVolume, PersistentVolumeClaim, spec_claimRef_uid;\n\
UseExternal, PersistentVolume, nfs, spec_nfs_path;";

    fn nfs_path() -> Metapath {
        Metapath::parse_listing(LISTING).unwrap()
    }

    #[test]
    fn pv_to_pvc_step_matches_the_printed_clause() {
        let text = emit_cypher(&nfs_path(), &EntityRef::uid("Event", "ev-1")).unwrap();
        assert!(text.contains(
            "MATCH (pv:PersistentVolume)-[r4:ReferInternal]->(pvc:PersistentVolumeClaim)\nWHERE r4.key = 'spec_claimRef_uid'"
        ));
        assert_eq!(text.matches("MATCH").count(), 5);
        assert_eq!(text.matches("WHERE").count(), 5);
        assert!(text.contains("AND e.uid = 'ev-1'"));
        assert!(text.ends_with("RETURN event, e, pod, pvc, pv, nfs, r1, r2, r3, r4, r5\n"));
        assert!(cypher_matches_metapath(&text, &nfs_path()));
    }

    #[test]
    fn empty_path_is_rejected() {
        assert_eq!(
            emit_cypher(&Metapath::default(), &EntityRef::uid("Event", "e")).unwrap_err(),
            QueryError::EmptyPath
        );
    }

    #[test]
    fn emission_is_deterministic() {
        let a = emit_cypher(&nfs_path(), &EntityRef::uid("Event", "x")).unwrap();
        let b = emit_cypher(&nfs_path(), &EntityRef::uid("Event", "x")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn repeated_kinds_get_distinct_aliases() {
        let path = extend_metapath(
            &Metapath::parse_listing(
                "ReferInternal, PersistentVolume, PersistentVolumeClaim, spec_claimRef_uid;\n\
                 ReferInternal, PersistentVolumeClaim, PersistentVolume, spec_volumeName;",
            )
            .unwrap(),
            "PersistentVolume",
        );
        let text = emit_cypher(&path, &EntityRef::uid("Event", "x")).unwrap();
        assert!(
            text.contains("(pvc:PersistentVolumeClaim)-[r4:ReferInternal]->(pv2:PersistentVolume)"),
            "{text}"
        );
    }

    #[test]
    fn compile_requires_extension() {
        let plain = Metapath::parse_listing("ReferInternal, Pod, Node, spec_nodeName;").unwrap();
        let t = crate::time::parse_timestamp("2020-12-10T00:00:00Z").unwrap();
        let anchor = EntityRef::uid("Event", "e");
        let vid = VertexId::entity(&anchor);
        assert_eq!(
            compile_plan(&plain, &anchor, &vid, t, 900).unwrap_err(),
            QueryError::NotExtended
        );
        let plan = compile_plan(&nfs_path(), &anchor, &vid, t, 900).unwrap();
        assert_eq!(plan.steps.len(), 5);
        assert_eq!(plan.steps[3].key, "spec_claimRef_uid");
        assert_eq!(plan.steps[3].edge_type, EdgeType::ReferInternal);
        assert_eq!(plan.steps[3].direction, Direction::Reverse);
        assert!(execute_plan(&plan, &StateGraph::default()).is_empty());
    }

    #[test]
    fn cypher_parser_rejects_malformed_text() {
        assert!(parse_metapath_cypher("MATCH (a:Pod)-[r1:ReferInternal]->(b:Node)\nRETURN a").is_err());
        assert!(
            parse_metapath_cypher("MATCH (a:Pod)-[r1:ReferInternal]->(b:Node)\nWHERE r1.key = 'x'").is_err()
        );
        assert!(parse_metapath_cypher(
            "MATCH (a:Pod-[r1:ReferInternal]->(b:Node)\nWHERE r1.key = 'x'\nRETURN a"
        )
        .is_err());
        let ok = parse_metapath_cypher(
            "MATCH (a:Pod)-[r1:ReferInternal]->(b:Node)\nWHERE r1.key = 'spec_nodeName'\nRETURN a, b, r1",
        )
        .unwrap();
        assert_eq!(ok[0].key, "spec_nodeName");
    }

    #[test]
    fn fragments_pick_spec_and_status() {
        let state = serde_json::json!({"metadata": {}, "spec": {"hard": {"pods": "50"}}, "status": {"used": {"pods": "50"}}});
        let f = state_fragments(state.as_object().unwrap());
        assert_eq!(
            f.iter().map(|f| f.pointer.as_str()).collect::<Vec<_>>(),
            vec!["/spec", "/status"]
        );
        let ext = serde_json::json!({"server": "s", "path": "/p", "exists": false});
        let f = state_fragments(ext.as_object().unwrap());
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].pointer, "");
        assert_eq!(f[0].value, ext);
    }
}
