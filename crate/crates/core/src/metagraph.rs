//! Kind-level MetaGraph and ranked metapath search.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::entity::{EdgeType, FlatKey};
use crate::stategraph::{StateGraph, EVENT_KIND, SNAPSHOT_EDGE_KEY};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetaGraphError {
    #[error("kind {0} is used both as an external and as a native kind")]
    ExternalNativeConflict(String),
    #[error("unknown kind {0}")]
    UnknownKind(String),
    #[error("no metapath from {src} to {dest} within {max_len} steps")]
    EmptyResult {
        src: String,
        dest: String,
        max_len: usize,
    },
    #[error("metapath listing line {line}: {detail}")]
    Listing { line: usize, detail: String },
}

/// A `(srcKind, destKind, key, type)` quadruplet with its support count.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetaEdge {
    pub src_kind: String,
    pub dest_kind: String,
    pub key: FlatKey,
    pub edge_type: EdgeType,
    pub frequency: usize,
}

/// One quadruplet per distinct `(kind(src), kind(dst), key, type)`; the
/// frequency is the number of StateGraph edges it covers.
pub fn extract_quadruplets(graph: &StateGraph) -> Vec<MetaEdge> {
    let mut counts: BTreeMap<(String, String, FlatKey, EdgeType), usize> = BTreeMap::new();
    for e in graph.edges() {
        let (Some(src), Some(dst)) = (graph.kind_of(&e.src), graph.kind_of(&e.dst)) else {
            continue;
        };
        *counts
            .entry((src.to_owned(), dst.to_owned(), e.key.clone(), e.edge_type))
            .or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((src_kind, dest_kind, key, edge_type), frequency)| MetaEdge {
            src_kind,
            dest_kind,
            key,
            edge_type,
            frequency,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KindCategory {
    NativeEntity,
    ExternalEntity,
    Snapshot,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetaGraph {
    kinds: BTreeMap<String, KindCategory>,
    edges: Vec<MetaEdge>,
}

/// Categorize kinds and attach the quadruplets.
///
/// Targets of HasState/HasEvent are snapshot kinds; declared external kinds
/// and targets of UseExternal are external; everything else is native.
pub fn build_meta_graph<I, S>(
    quadruplets: &[MetaEdge],
    external_kinds: I,
) -> Result<MetaGraph, MetaGraphError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut external: BTreeSet<String> = external_kinds.into_iter().map(Into::into).collect();
    let mut snapshot = BTreeSet::new();
    let mut native = BTreeSet::new();
    for q in quadruplets {
        match q.edge_type {
            EdgeType::HasState | EdgeType::HasEvent => {
                snapshot.insert(q.dest_kind.clone());
            }
            EdgeType::UseExternal => {
                external.insert(q.dest_kind.clone());
                native.insert(q.src_kind.clone());
            }
            EdgeType::ReferInternal => {
                native.insert(q.src_kind.clone());
                native.insert(q.dest_kind.clone());
            }
        }
    }
    if let Some(k) = native.intersection(&external).next() {
        return Err(MetaGraphError::ExternalNativeConflict(k.clone()));
    }
    let mut kinds = BTreeMap::new();
    for q in quadruplets {
        for k in [&q.src_kind, &q.dest_kind] {
            let cat = if snapshot.contains(k) {
                KindCategory::Snapshot
            } else if external.contains(k) {
                KindCategory::ExternalEntity
            } else {
                KindCategory::NativeEntity
            };
            kinds.insert(k.clone(), cat);
        }
    }
    let mut edges = quadruplets.to_vec();
    edges.sort();
    Ok(MetaGraph { kinds, edges })
}

impl MetaGraph {
    pub fn from_state_graph<I, S>(graph: &StateGraph, external_kinds: I) -> Result<Self, MetaGraphError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        build_meta_graph(&extract_quadruplets(graph), external_kinds)
    }

    pub fn category(&self, kind: &str) -> Option<KindCategory> {
        self.kinds.get(kind).copied()
    }

    pub fn kinds(&self) -> impl Iterator<Item = (&str, KindCategory)> {
        self.kinds.iter().map(|(k, c)| (k.as_str(), *c))
    }

    /// Native and external kinds, the vocabulary the locator may answer with.
    pub fn entity_kinds(&self) -> Vec<String> {
        self.kinds
            .iter()
            .filter(|(_, c)| **c != KindCategory::Snapshot)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn edges(&self) -> &[MetaEdge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn total_frequency(&self) -> usize {
        self.edges.iter().map(|e| e.frequency).sum()
    }

    /// The quadruplet covering `(src_kind, dest_kind, key, type)`.
    pub fn covering_edge(
        &self,
        src_kind: &str,
        dest_kind: &str,
        key: &FlatKey,
        edge_type: EdgeType,
    ) -> Option<&MetaEdge> {
        self.edges.iter().find(|e| {
            e.src_kind == src_kind && e.dest_kind == dest_kind && &e.key == key && e.edge_type == edge_type
        })
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph metagraph {\n");
        for (kind, cat) in &self.kinds {
            let shape = match cat {
                KindCategory::NativeEntity => "box",
                KindCategory::ExternalEntity => "box, style=dashed",
                KindCategory::Snapshot => "ellipse",
            };
            out.push_str(&format!("  {:?} [shape={shape}];\n", kind));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "  {:?} -> {:?} [label={:?}];\n",
                e.src_kind,
                e.dest_kind,
                format!("{} {} ({})", e.edge_type, e.key, e.frequency)
            ));
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Walk from `src_kind` to `dest_kind`.
    Forward,
    /// Walk against the edge, from `dest_kind` to `src_kind`.
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MetapathStep {
    pub edge_type: EdgeType,
    pub src_kind: String,
    pub dest_kind: String,
    pub key: FlatKey,
    pub direction: Direction,
}

impl MetapathStep {
    pub fn from_kind(&self) -> &str {
        match self.direction {
            Direction::Forward => &self.src_kind,
            Direction::Reverse => &self.dest_kind,
        }
    }

    pub fn to_kind(&self) -> &str {
        match self.direction {
            Direction::Forward => &self.dest_kind,
            Direction::Reverse => &self.src_kind,
        }
    }

    fn line(&self) -> String {
        format!(
            "{}, {}, {}, {};",
            self.edge_type, self.src_kind, self.dest_kind, self.key
        )
    }
}

/// Ordered sequence of MetaGraph edges, each walked in a recorded direction.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Metapath {
    pub steps: Vec<MetapathStep>,
}

impl Metapath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start_kind(&self) -> Option<&str> {
        self.steps.first().map(MetapathStep::from_kind)
    }

    pub fn end_kind(&self) -> Option<&str> {
        self.steps.last().map(MetapathStep::to_kind)
    }

    /// Visited kinds in walk order, `len() + 1` entries for a non-empty path.
    pub fn kinds(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.steps.first().map(|s| s.from_kind()).into_iter().collect();
        out.extend(self.steps.iter().map(MetapathStep::to_kind));
        out
    }

    /// One `type, srcKind, destKind, key;` line per step.
    pub fn to_listing(&self) -> String {
        self.steps
            .iter()
            .map(MetapathStep::line)
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Parse the listing format back, inferring each step's direction from
    /// the kind shared with the previous step.
    pub fn parse_listing(text: &str) -> Result<Self, MetaGraphError> {
        let mut raw = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: &str| MetaGraphError::Listing {
                line: i + 1,
                detail: detail.to_owned(),
            };
            let body = line
                .strip_suffix(';')
                .ok_or_else(|| err("missing trailing ';'"))?;
            let parts: Vec<&str> = body.split(',').map(str::trim).collect();
            let [t, s, d, k] = parts[..] else {
                return Err(err("expected four comma-separated fields"));
            };
            let edge_type = EdgeType::parse(t).ok_or_else(|| err("unknown edge type"))?;
            let key = FlatKey::new(k).map_err(|e| err(&e.to_string()))?;
            if s.is_empty() || d.is_empty() {
                return Err(err("empty kind"));
            }
            raw.push((i + 1, edge_type, s.to_owned(), d.to_owned(), key));
        }
        let Some(first) = raw.first() else {
            return Ok(Metapath::default());
        };
        let starts = if first.1.is_snapshot_edge() {
            [first.3.clone(), first.2.clone()]
        } else {
            [first.2.clone(), first.3.clone()]
        };
        let mut last_err = None;
        for start in starts {
            match orient(&raw, &start) {
                Ok(p) => return Ok(p),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.expect("two attempts"))
    }

    /// Whether the path begins with the EVENT -> Event -> srcKind prefix.
    pub fn is_extended(&self) -> bool {
        match &self.steps[..] {
            [a, b, ..] => {
                a.edge_type == EdgeType::HasEvent
                    && a.src_kind == EVENT_KIND
                    && a.direction == Direction::Reverse
                    && b.edge_type == EdgeType::ReferInternal
                    && b.src_kind == EVENT_KIND
                    && b.key == "involvedObject_uid"
                    && b.direction == Direction::Forward
            }
            _ => false,
        }
    }
}

fn orient(
    raw: &[(usize, EdgeType, String, String, FlatKey)],
    start: &str,
) -> Result<Metapath, MetaGraphError> {
    let mut current = start.to_owned();
    let mut steps = Vec::new();
    for (line, edge_type, s, d, key) in raw {
        let direction = if *s == current {
            Direction::Forward
        } else if *d == current {
            Direction::Reverse
        } else {
            return Err(MetaGraphError::Listing {
                line: *line,
                detail: format!("step does not touch {current}"),
            });
        };
        let step = MetapathStep {
            edge_type: *edge_type,
            src_kind: s.clone(),
            dest_kind: d.clone(),
            key: key.clone(),
            direction,
        };
        current = step.to_kind().to_owned();
        steps.push(step);
    }
    Ok(Metapath { steps })
}

impl fmt::Display for Metapath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.kinds().join(" -> "))
    }
}

/// Prepend the EVENT -> Event -> `src_kind` steps.
pub fn extend_metapath(path: &Metapath, src_kind: &str) -> Metapath {
    debug_assert!(path.start_kind().is_none_or(|k| k == src_kind));
    let event_label = crate::stategraph::snapshot_label(EVENT_KIND);
    let mut steps = vec![
        MetapathStep {
            edge_type: EdgeType::HasEvent,
            src_kind: EVENT_KIND.to_owned(),
            dest_kind: event_label,
            key: FlatKey::new(SNAPSHOT_EDGE_KEY).expect("static key"),
            direction: Direction::Reverse,
        },
        MetapathStep {
            edge_type: EdgeType::ReferInternal,
            src_kind: EVENT_KIND.to_owned(),
            dest_kind: src_kind.to_owned(),
            key: FlatKey::new("involvedObject_uid").expect("static key"),
            direction: Direction::Forward,
        },
    ];
    steps.extend(path.steps.iter().cloned());
    Metapath { steps }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetapathLimits {
    pub max_len: usize,
    pub max_paths: usize,
}

impl Default for MetapathLimits {
    fn default() -> Self {
        Self {
            max_len: 4,
            max_paths: 10,
        }
    }
}

/// A metapath with the figures used to rank it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedMetapath {
    pub path: Metapath,
    pub inter_kinds_visited: usize,
    pub min_frequency: usize,
}

/// Total ranking order: more interKinds visited, then shorter, then
/// stronger weakest step, then lexicographic on the steps.
pub fn rank_order(a: &RankedMetapath, b: &RankedMetapath) -> std::cmp::Ordering {
    b.inter_kinds_visited
        .cmp(&a.inter_kinds_visited)
        .then(a.path.len().cmp(&b.path.len()))
        .then(b.min_frequency.cmp(&a.min_frequency))
        .then_with(|| a.path.steps.cmp(&b.path.steps))
}

pub fn rank_metapath(meta: &MetaGraph, path: Metapath, inter_kinds: &[String]) -> RankedMetapath {
    let kinds: BTreeSet<&str> = path.kinds().into_iter().collect();
    let inter: BTreeSet<&str> = inter_kinds.iter().map(String::as_str).collect();
    let inter_kinds_visited = inter.iter().filter(|k| kinds.contains(*k)).count();
    let min_frequency = path
        .steps
        .iter()
        .map(|s| {
            meta.covering_edge(&s.src_kind, &s.dest_kind, &s.key, s.edge_type)
                .map_or(0, |e| e.frequency)
        })
        .min()
        .unwrap_or(0);
    RankedMetapath {
        path,
        inter_kinds_visited,
        min_frequency,
    }
}

/// Whether a kind may appear inside a metapath between `src` and `dest`.
/// Snapshot kinds never do; Event only as an endpoint, since Events point at
/// nearly every kind and would short-circuit real dependencies.
fn traversable(meta: &MetaGraph, kind: &str, src: &str, dest: &str) -> bool {
    match meta.category(kind) {
        Some(KindCategory::NativeEntity) | Some(KindCategory::ExternalEntity) => {
            kind != EVENT_KIND || kind == src || kind == dest
        }
        _ => false,
    }
}

/// Ranked metapaths from `src_kind` to `dest_kind` over entity kinds,
/// ignoring edge direction but recording it per step. Paths are simple: no
/// kind is visited twice, except that a path may close back on `src_kind`
/// when it equals `dest_kind`; no quadruplet is used twice.
pub fn find_metapaths(
    meta: &MetaGraph,
    src_kind: &str,
    dest_kind: &str,
    inter_kinds: &[String],
    limits: &MetapathLimits,
) -> Result<Vec<RankedMetapath>, MetaGraphError> {
    for k in [src_kind, dest_kind] {
        match meta.category(k) {
            Some(KindCategory::NativeEntity) | Some(KindCategory::ExternalEntity) => {}
            _ => return Err(MetaGraphError::UnknownKind(k.to_owned())),
        }
    }
    let usable: Vec<usize> = (0..meta.edges.len())
        .filter(|&i| {
            let e = &meta.edges[i];
            !e.edge_type.is_snapshot_edge()
                && traversable(meta, &e.src_kind, src_kind, dest_kind)
                && traversable(meta, &e.dest_kind, src_kind, dest_kind)
        })
        .collect();
    let mut adjacency: BTreeMap<&str, Vec<(usize, Direction)>> = BTreeMap::new();
    for &i in &usable {
        let e = &meta.edges[i];
        adjacency
            .entry(&e.src_kind)
            .or_default()
            .push((i, Direction::Forward));
        if e.src_kind != e.dest_kind {
            adjacency
                .entry(&e.dest_kind)
                .or_default()
                .push((i, Direction::Reverse));
        }
    }

    let mut found = Vec::new();
    let mut search = Search {
        meta,
        adjacency: &adjacency,
        dest: dest_kind,
        max_len: limits.max_len,
        steps: Vec::new(),
        visited: BTreeSet::from([src_kind.to_owned()]),
        used: BTreeSet::new(),
        found: &mut found,
    };
    search.walk(src_kind);

    if found.is_empty() {
        return Err(MetaGraphError::EmptyResult {
            src: src_kind.to_owned(),
            dest: dest_kind.to_owned(),
            max_len: limits.max_len,
        });
    }
    let mut ranked: Vec<RankedMetapath> = found
        .into_iter()
        .map(|p| rank_metapath(meta, p, inter_kinds))
        .collect();
    ranked.sort_by(rank_order);
    ranked.truncate(limits.max_paths);
    Ok(ranked)
}

struct Search<'a> {
    meta: &'a MetaGraph,
    adjacency: &'a BTreeMap<&'a str, Vec<(usize, Direction)>>,
    dest: &'a str,
    max_len: usize,
    steps: Vec<MetapathStep>,
    visited: BTreeSet<String>,
    used: BTreeSet<usize>,
    found: &'a mut Vec<Metapath>,
}

impl Search<'_> {
    fn walk(&mut self, current: &str) {
        if self.steps.len() >= self.max_len {
            return;
        }
        let Some(options) = self.adjacency.get(current) else {
            return;
        };
        for &(i, direction) in options {
            if self.used.contains(&i) {
                continue;
            }
            let e = &self.meta.edges[i];
            let next = match direction {
                Direction::Forward => e.dest_kind.as_str(),
                Direction::Reverse => e.src_kind.as_str(),
            };
            let closes = next == self.dest;
            if next == current || (!closes && self.visited.contains(next)) {
                continue;
            }
            if closes && self.visited.contains(next) && self.steps.is_empty() {
                continue;
            }
            self.steps.push(MetapathStep {
                edge_type: e.edge_type,
                src_kind: e.src_kind.clone(),
                dest_kind: e.dest_kind.clone(),
                key: e.key.clone(),
                direction,
            });
            self.used.insert(i);
            if closes {
                self.found.push(Metapath {
                    steps: self.steps.clone(),
                });
            } else {
                self.visited.insert(next.to_owned());
                self.walk(next);
                self.visited.remove(next);
            }
            self.used.remove(&i);
            self.steps.pop();
        }
    }
}
