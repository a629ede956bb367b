use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use super::{
    scalar_text, visit_leaves, EdgeType, EntityError, EntityRef, ExternalKind, FlatKey, IdentityRules,
    KeyStats,
};
use crate::ingest::DedupedSnapshot;

/// `(kind, key)` pattern; `kind = "*"` matches any kind and a trailing `*` on
/// the key is a prefix match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPattern {
    pub kind: String,
    pub key: String,
}

impl KeyPattern {
    pub fn new(kind: &str, key: &str) -> Self {
        Self {
            kind: kind.to_owned(),
            key: key.to_owned(),
        }
    }

    pub fn matches(&self, kind: &str, key: &str) -> bool {
        let kind_ok = self.kind == "*" || self.kind == kind;
        let key_ok = match self.key.strip_suffix('*') {
            Some(prefix) => key.starts_with(prefix),
            None => self.key == key,
        };
        kind_ok && key_ok
    }
}

/// Target of a reference key: a fixed kind, or `@field` to read the kind from
/// a sibling field (as in `ownerReferences[].kind` or `involvedObject.kind`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum TargetKind {
    Fixed(String),
    FromSibling(String),
}

impl From<String> for TargetKind {
    fn from(s: String) -> Self {
        match s.strip_prefix('@') {
            Some(field) => TargetKind::FromSibling(field.to_owned()),
            None => TargetKind::Fixed(s),
        }
    }
}

impl From<TargetKind> for String {
    fn from(t: TargetKind) -> String {
        t.to_string()
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Fixed(k) => f.write_str(k),
            TargetKind::FromSibling(field) => write!(f, "@{field}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyMapping {
    pub kind: String,
    pub key: FlatKey,
    pub target_kind: TargetKind,
    pub edge_type: EdgeType,
    /// For `UseExternal`: identity field of the target -> sibling field name
    /// in the referencing object. Unlisted fields are looked up by their own
    /// name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub composite: BTreeMap<String, String>,
}

impl KeyMapping {
    fn new(kind: &str, key: &str, target: &str, edge_type: EdgeType) -> Self {
        Self {
            kind: kind.to_owned(),
            key: FlatKey::new(key).expect("static key"),
            target_kind: TargetKind::from(target.to_owned()),
            edge_type,
            composite: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnmappedPolicy {
    /// A statistically selected key without a mapping is a configuration error.
    #[default]
    Error,
    /// Log the key as an unvalidated candidate and leave it out of the catalog.
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    pub min_occurrence: usize,
    pub diversity_ratio: f64,
    pub include: Vec<KeyPattern>,
    pub exclude: Vec<KeyPattern>,
    /// Treat every key in `mappings` as include-listed.
    pub include_mapped_keys: bool,
    /// Keys that identify the snapshot's own entity rather than a reference.
    pub identity_keys: Vec<FlatKey>,
    pub unmapped: UnmappedPolicy,
    pub cluster_scoped_kinds: Vec<String>,
    pub external_kinds: Vec<ExternalKind>,
    pub mappings: Vec<KeyMapping>,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        use EdgeType::{ReferInternal as RI, UseExternal as UE};
        let mut mappings = vec![
            KeyMapping::new("Event", "involvedObject_uid", "@kind", RI),
            KeyMapping::new("*", "metadata_ownerReferences_name", "@kind", RI),
            KeyMapping::new("*", "metadata_namespace", "Namespace", RI),
            KeyMapping::new("Pod", "spec_nodeName", "Node", RI),
            KeyMapping::new("Pod", "spec_serviceAccountName", "ServiceAccount", RI),
            KeyMapping::new(
                "Pod",
                "spec_volumes_persistentVolumeClaim_claimName",
                "PersistentVolumeClaim",
                RI,
            ),
            KeyMapping::new("Pod", "spec_volumes_configMap_name", "ConfigMap", RI),
            KeyMapping::new("Pod", "spec_volumes_secret_secretName", "Secret", RI),
            KeyMapping::new("PersistentVolumeClaim", "spec_volumeName", "PersistentVolume", RI),
            KeyMapping::new(
                "PersistentVolumeClaim",
                "spec_storageClassName",
                "StorageClass",
                RI,
            ),
            KeyMapping::new(
                "PersistentVolume",
                "spec_claimRef_uid",
                "PersistentVolumeClaim",
                RI,
            ),
            KeyMapping::new("PersistentVolume", "spec_storageClassName", "StorageClass", RI),
            KeyMapping::new("PersistentVolume", "spec_nfs_path", "nfs", UE),
        ];
        for owner in ["Deployment", "ReplicaSet", "StatefulSet", "DaemonSet", "Job"] {
            mappings.extend([
                KeyMapping::new(
                    owner,
                    "spec_template_spec_serviceAccountName",
                    "ServiceAccount",
                    RI,
                ),
                KeyMapping::new(
                    owner,
                    "spec_template_spec_volumes_configMap_name",
                    "ConfigMap",
                    RI,
                ),
                KeyMapping::new(
                    owner,
                    "spec_template_spec_volumes_secret_secretName",
                    "Secret",
                    RI,
                ),
                KeyMapping::new(
                    owner,
                    "spec_template_spec_volumes_persistentVolumeClaim_claimName",
                    "PersistentVolumeClaim",
                    RI,
                ),
            ]);
        }
        Self {
            min_occurrence: 3,
            diversity_ratio: 0.5,
            include: Vec::new(),
            exclude: vec![KeyPattern::new("Event", "metadata_namespace")],
            include_mapped_keys: true,
            identity_keys: ["metadata_uid", "metadata_name"]
                .into_iter()
                .map(|k| FlatKey::new(k).expect("static key"))
                .collect(),
            unmapped: UnmappedPolicy::Error,
            cluster_scoped_kinds: [
                "Namespace",
                "Node",
                "PersistentVolume",
                "StorageClass",
                "ClusterRole",
                "ClusterRoleBinding",
                "PriorityClass",
                "CustomResourceDefinition",
            ]
            .into_iter()
            .map(str::to_owned)
            .collect(),
            external_kinds: vec![ExternalKind {
                kind: "nfs".into(),
                identity_fields: vec!["server".into(), "path".into()],
            }],
            mappings,
        }
    }
}

impl CatalogConfig {
    pub fn identity_rules(&self) -> IdentityRules {
        IdentityRules::new(&self.external_kinds, self.cluster_scoped_kinds.iter().cloned())
    }

    fn mapping_for(&self, kind: &str, key: &FlatKey) -> Option<&KeyMapping> {
        self.mappings
            .iter()
            .find(|m| m.kind == kind && &m.key == key)
            .or_else(|| self.mappings.iter().find(|m| m.kind == "*" && &m.key == key))
    }

    fn validate(&self, rules: &IdentityRules) -> Result<(), EntityError> {
        let mut seen = BTreeSet::new();
        for m in &self.mappings {
            if !seen.insert((m.kind.as_str(), m.key.as_str())) {
                return Err(EntityError::Config(format!(
                    "duplicate mapping for ({}, {})",
                    m.kind, m.key
                )));
            }
            if rules.is_external(&m.kind) {
                return Err(EntityError::Config(format!(
                    "mapping ({}, {}) starts at external kind {}",
                    m.kind, m.key, m.kind
                )));
            }
            match (m.edge_type, &m.target_kind) {
                (EdgeType::UseExternal, TargetKind::Fixed(t)) if !rules.is_external(t) => {
                    return Err(EntityError::Config(format!(
                        "mapping ({}, {}) uses UseExternal but {t} is not a declared external kind",
                        m.kind, m.key
                    )))
                }
                (EdgeType::UseExternal, TargetKind::FromSibling(_)) => {
                    return Err(EntityError::Config(format!(
                        "mapping ({}, {}): UseExternal targets must be fixed kinds",
                        m.kind, m.key
                    )))
                }
                (EdgeType::ReferInternal, TargetKind::Fixed(t)) if rules.is_external(t) => {
                    return Err(EntityError::Config(format!(
                        "mapping ({}, {}) uses ReferInternal but {t} is an external kind",
                        m.kind, m.key
                    )))
                }
                (EdgeType::ReferInternal, TargetKind::Fixed(t)) if t.is_empty() => {
                    return Err(EntityError::Config(format!(
                        "mapping ({}, {}) has an empty target kind",
                        m.kind, m.key
                    )))
                }
                (EdgeType::HasState | EdgeType::HasEvent, _) => {
                    return Err(EntityError::Config(format!(
                        "mapping ({}, {}) must be ReferInternal or UseExternal",
                        m.kind, m.key
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub target: TargetKind,
    pub edge_type: EdgeType,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub composite: BTreeMap<String, String>,
}

/// Selected entity keys per kind, with the target kind and edge type each
/// reference key produces.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EntityKeyCatalog {
    entries: BTreeMap<String, BTreeMap<FlatKey, CatalogEntry>>,
    identity_keys: BTreeSet<(String, FlatKey)>,
    ignored: Vec<(String, FlatKey)>,
    known_kinds: BTreeSet<String>,
    rules: IdentityRules,
}

impl EntityKeyCatalog {
    pub fn entry(&self, kind: &str, key: &FlatKey) -> Option<&CatalogEntry> {
        self.entries.get(kind).and_then(|m| m.get(key))
    }

    /// Whether the key was selected, either as a reference or an identity key.
    pub fn is_selected(&self, kind: &str, key: &str) -> bool {
        let Ok(key) = FlatKey::new(key) else {
            return false;
        };
        self.entry(kind, &key).is_some() || self.identity_keys.contains(&(kind.to_owned(), key))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &FlatKey, &CatalogEntry)> {
        self.entries
            .iter()
            .flat_map(|(kind, m)| m.iter().map(move |(k, e)| (kind.as_str(), k, e)))
    }

    /// Candidates selected by statistics that had no mapping and were ignored.
    pub fn ignored(&self) -> &[(String, FlatKey)] {
        &self.ignored
    }

    pub fn rules(&self) -> &IdentityRules {
        &self.rules
    }

    pub fn is_known_kind(&self, kind: &str) -> bool {
        self.known_kinds.contains(kind) || self.rules.is_external(kind)
    }

    pub fn is_external(&self, kind: &str) -> bool {
        self.rules.is_external(kind)
    }
}

pub fn select_entity_keys(stats: &KeyStats, config: &CatalogConfig) -> Result<EntityKeyCatalog, EntityError> {
    let rules = config.identity_rules();
    config.validate(&rules)?;

    let mut catalog = EntityKeyCatalog {
        rules,
        ..Default::default()
    };
    let mut unmapped = Vec::new();

    for (kind, key, stat) in stats.iter() {
        if catalog.rules.is_external(kind) {
            continue;
        }
        catalog.known_kinds.insert(kind.to_owned());
        if config.exclude.iter().any(|p| p.matches(kind, key.as_str())) {
            continue;
        }
        let mapping = config.mapping_for(kind, key);
        let included = config.include.iter().any(|p| p.matches(kind, key.as_str()))
            || (config.include_mapped_keys && mapping.is_some());
        let diverse =
            stat.occurrence_count >= config.min_occurrence && stat.diversity() >= config.diversity_ratio;
        if !(included || diverse) {
            continue;
        }
        match mapping {
            Some(m) => {
                catalog.entries.entry(kind.to_owned()).or_default().insert(
                    key.clone(),
                    CatalogEntry {
                        target: m.target_kind.clone(),
                        edge_type: m.edge_type,
                        composite: m.composite.clone(),
                    },
                );
            }
            None if config.identity_keys.contains(key) => {
                catalog.identity_keys.insert((kind.to_owned(), key.clone()));
            }
            None => unmapped.push((kind.to_owned(), key.clone())),
        }
    }

    if !unmapped.is_empty() {
        match config.unmapped {
            UnmappedPolicy::Error => {
                let names: Vec<String> = unmapped.iter().map(|(k, key)| format!("{k}.{key}")).collect();
                return Err(EntityError::Config(format!(
                    "selected entity keys have no target-kind mapping: {}",
                    names.join(", ")
                )));
            }
            UnmappedPolicy::Ignore => {
                for (kind, key) in &unmapped {
                    warn!(%kind, %key, "entity key candidate has no mapping; ignored");
                }
                catalog.ignored = unmapped;
            }
        }
    }
    Ok(catalog)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub key: FlatKey,
    pub edge_type: EdgeType,
    pub target: EntityRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub primary: EntityRef,
    pub references: Vec<Reference>,
}

/// Primary entity of a snapshot plus one reference per catalog-key occurrence.
///
/// Returns `Ok(None)` for kinds the catalog has never seen.
pub fn extract_entities(
    snapshot: &DedupedSnapshot,
    catalog: &EntityKeyCatalog,
) -> Result<Option<Extraction>, EntityError> {
    if !catalog.is_known_kind(&snapshot.kind) {
        warn!(kind = %snapshot.kind, "snapshot of unknown kind skipped");
        return Ok(None);
    }
    let rules = catalog.rules();
    let primary = rules.primary_identity(&snapshot.kind, &snapshot.payload)?;
    let mut references = Vec::new();
    if rules.is_external(&snapshot.kind) {
        return Ok(Some(Extraction { primary, references }));
    }
    let Some(kind_entries) = catalog.entries.get(&snapshot.kind) else {
        return Ok(Some(Extraction { primary, references }));
    };
    let own_namespace = primary.namespace.clone();

    visit_leaves(&snapshot.payload, &mut |leaf| {
        let Some(entry) = kind_entries.get(&leaf.key) else {
            return;
        };
        let Some(value) = scalar_text(leaf.value).filter(|v| !v.is_empty()) else {
            return;
        };
        let target_kind = match &entry.target {
            TargetKind::Fixed(k) => k.clone(),
            TargetKind::FromSibling(field) => match leaf.parent.get(field).and_then(Value::as_str) {
                Some(k) if !k.is_empty() => k.to_owned(),
                _ => {
                    warn!(key = %leaf.key, "reference without a sibling kind field skipped");
                    return;
                }
            },
        };
        let target = match entry.edge_type {
            EdgeType::ReferInternal => {
                if rules.is_external(&target_kind) {
                    warn!(key = %leaf.key, %target_kind, "internal reference to an external kind skipped");
                    return;
                }
                let namespace = if rules.is_cluster_scoped(&target_kind) {
                    None
                } else {
                    own_namespace.as_deref()
                };
                if leaf.name == "uid" || leaf.key.as_str().ends_with("_uid") {
                    let name = leaf.parent.get("name").and_then(Value::as_str);
                    EntityRef::uid(&target_kind, &value).with_hints(name, namespace)
                } else {
                    EntityRef::named(&target_kind, namespace, value)
                }
            }
            EdgeType::UseExternal => {
                let Some(fields) = rules.identity_fields(&target_kind) else {
                    return;
                };
                let mut composite = BTreeMap::new();
                for field in fields {
                    let source = entry.composite.get(field).unwrap_or(field);
                    let v = leaf
                        .parent
                        .get(source)
                        .and_then(scalar_text)
                        .or_else(|| (fields.len() == 1).then(|| value.clone()));
                    match v {
                        Some(v) => {
                            composite.insert(field.clone(), v);
                        }
                        None => {
                            warn!(key = %leaf.key, %field, "external reference missing identity field");
                            return;
                        }
                    }
                }
                EntityRef::composite(&target_kind, composite)
            }
            EdgeType::HasState | EdgeType::HasEvent => return,
        };
        references.push(Reference {
            key: leaf.key,
            edge_type: entry.edge_type,
            target,
        });
    });

    Ok(Some(Extraction { primary, references }))
}
