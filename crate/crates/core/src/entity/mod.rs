//! Entity identity, entity-key selection and reference extraction.
//!
//! Native entities (anything stored by the API server) are identified by
//! `metadata.uid`, falling back to `(kind, namespace, name)`. External
//! entities such as NFS directories carry a composite identity made of
//! declared payload fields.

mod canonical;
mod catalog;
mod keys;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use canonical::{canonicalize, IdentityIndex};
pub use catalog::{
    extract_entities, select_entity_keys, CatalogConfig, CatalogEntry, EntityKeyCatalog, Extraction,
    KeyMapping, KeyPattern, Reference, TargetKind, UnmappedPolicy,
};
pub(crate) use keys::visit_leaves;
pub use keys::{flatten_keys, profile_keys, FlatKey, KeyStat, KeyStats};

#[derive(Debug, thiserror::Error)]
pub enum EntityError {
    #[error("{kind} snapshot has neither metadata.uid nor metadata.name")]
    MissingIdentity { kind: String },
    #[error("external {kind} snapshot is missing identity field `{field}`")]
    MissingCompositeField { kind: String, field: String },
    #[error(
        "ambiguous reference to {kind} {name:?} in namespace {namespace:?}: candidate uids {candidates:?}"
    )]
    Ambiguous {
        kind: String,
        namespace: Option<String>,
        name: String,
        candidates: Vec<String>,
    },
    #[error("catalog configuration: {0}")]
    Config(String),
    #[error("invalid flat key {0:?}")]
    InvalidKey(String),
}

/// The four StateGraph edge types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeType {
    ReferInternal,
    UseExternal,
    HasState,
    HasEvent,
}

impl EdgeType {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeType::ReferInternal => "ReferInternal",
            EdgeType::UseExternal => "UseExternal",
            EdgeType::HasState => "HasState",
            EdgeType::HasEvent => "HasEvent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ReferInternal" => Some(EdgeType::ReferInternal),
            "UseExternal" => Some(EdgeType::UseExternal),
            "HasState" => Some(EdgeType::HasState),
            "HasEvent" => Some(EdgeType::HasEvent),
            _ => None,
        }
    }

    pub fn is_snapshot_edge(&self) -> bool {
        matches!(self, EdgeType::HasState | EdgeType::HasEvent)
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How an entity is identified. Exactly one mode per reference.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identity {
    Uid(String),
    Name {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        namespace: Option<String>,
        name: String,
    },
    Composite(BTreeMap<String, String>),
}

/// A canonical reference to one entity.
///
/// Equality, ordering and hashing only look at `(kind, identity)`; the
/// `name`/`namespace` hints travel along for display and ground-truth
/// matching.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityRef {
    pub kind: String,
    pub identity: Identity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
    /// Set when a name-based reference could not be resolved to a uid.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unresolved: bool,
}

impl EntityRef {
    pub fn uid(kind: impl Into<String>, uid: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            identity: Identity::Uid(uid.into()),
            name: None,
            namespace: None,
            unresolved: false,
        }
    }

    pub fn named(kind: impl Into<String>, namespace: Option<&str>, name: impl Into<String>) -> Self {
        let name = name.into();
        let namespace = namespace.map(str::to_owned);
        Self {
            kind: kind.into(),
            identity: Identity::Name {
                namespace: namespace.clone(),
                name: name.clone(),
            },
            name: Some(name),
            namespace,
            unresolved: false,
        }
    }

    pub fn composite(kind: impl Into<String>, fields: BTreeMap<String, String>) -> Self {
        Self {
            kind: kind.into(),
            identity: Identity::Composite(fields),
            name: None,
            namespace: None,
            unresolved: false,
        }
    }

    pub fn with_hints(mut self, name: Option<&str>, namespace: Option<&str>) -> Self {
        self.name = name.map(str::to_owned);
        self.namespace = namespace.map(str::to_owned);
        self
    }

    pub fn uid_str(&self) -> Option<&str> {
        match &self.identity {
            Identity::Uid(u) => Some(u),
            _ => None,
        }
    }

    /// Stable textual key used to derive vertex ids.
    pub fn key(&self) -> String {
        match &self.identity {
            Identity::Uid(u) => format!("{}#uid={}", self.kind, u),
            Identity::Name { namespace, name } => match namespace {
                Some(ns) => format!("{}#name={}/{}", self.kind, ns, name),
                None => format!("{}#name={}", self.kind, name),
            },
            Identity::Composite(fields) => format!("{}#{}", self.kind, composite_text(fields)),
        }
    }

    /// Fill hints that are missing on `self` from `other`.
    pub(crate) fn absorb_hints(&mut self, other: &EntityRef) {
        if self.name.is_none() {
            self.name = other.name.clone();
        }
        if self.namespace.is_none() {
            self.namespace = other.namespace.clone();
        }
    }
}

fn composite_text(fields: &BTreeMap<String, String>) -> String {
    fields
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

impl PartialEq for EntityRef {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.identity == other.identity
    }
}

impl Eq for EntityRef {}

impl Hash for EntityRef {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.kind.hash(state);
        self.identity.hash(state);
    }
}

impl PartialOrd for EntityRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EntityRef {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.kind, &self.identity).cmp(&(&other.kind, &other.identity))
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.identity, &self.name) {
            (Identity::Composite(fields), _) => write!(f, "{} {}", self.kind, composite_text(fields)),
            (_, Some(name)) => match &self.namespace {
                Some(ns) => write!(f, "{} {}/{}", self.kind, ns, name),
                None => write!(f, "{} {}", self.kind, name),
            },
            (Identity::Uid(u), None) => write!(f, "{} uid:{}", self.kind, u),
            (Identity::Name { namespace, name }, None) => match namespace {
                Some(ns) => write!(f, "{} {}/{}", self.kind, ns, name),
                None => write!(f, "{} {}", self.kind, name),
            },
        }
    }
}

/// A kind living outside the API server, identified by payload fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalKind {
    pub kind: String,
    pub identity_fields: Vec<String>,
}

/// Rules for deriving the primary identity of a snapshot.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IdentityRules {
    external: BTreeMap<String, Vec<String>>,
    cluster_scoped: BTreeSet<String>,
}

impl IdentityRules {
    pub fn new<I, S>(external: &[ExternalKind], cluster_scoped: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            external: external
                .iter()
                .map(|e| (e.kind.clone(), e.identity_fields.clone()))
                .collect(),
            cluster_scoped: cluster_scoped.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_external(&self, kind: &str) -> bool {
        self.external.contains_key(kind)
    }

    pub fn external_kinds(&self) -> impl Iterator<Item = &str> {
        self.external.keys().map(String::as_str)
    }

    pub fn identity_fields(&self, kind: &str) -> Option<&[String]> {
        self.external.get(kind).map(Vec::as_slice)
    }

    pub fn is_cluster_scoped(&self, kind: &str) -> bool {
        self.cluster_scoped.contains(kind)
    }

    /// Identity of the entity a snapshot of `kind` describes.
    pub fn primary_identity(
        &self,
        kind: &str,
        payload: &Map<String, Value>,
    ) -> Result<EntityRef, EntityError> {
        if let Some(fields) = self.external.get(kind) {
            let mut composite = BTreeMap::new();
            for field in fields {
                let value = payload.get(field).and_then(scalar_text).ok_or_else(|| {
                    EntityError::MissingCompositeField {
                        kind: kind.to_owned(),
                        field: field.clone(),
                    }
                })?;
                composite.insert(field.clone(), value);
            }
            return Ok(EntityRef::composite(kind, composite));
        }

        let metadata = payload.get("metadata").and_then(Value::as_object);
        let field = |name: &str| {
            metadata
                .and_then(|m| m.get(name))
                .and_then(Value::as_str)
                .filter(|s| !s.is_empty())
        };
        let name = field("name");
        let namespace = field("namespace");
        match (field("uid"), name) {
            (Some(uid), _) => Ok(EntityRef::uid(kind, uid).with_hints(name, namespace)),
            (None, Some(name)) => Ok(EntityRef::named(kind, namespace, name)),
            (None, None) => Err(EntityError::MissingIdentity {
                kind: kind.to_owned(),
            }),
        }
    }
}

/// Text form of a JSON scalar; `None` for null, arrays and objects.
pub(crate) fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}
