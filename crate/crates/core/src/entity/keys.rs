use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::EntityError;
use crate::ingest::DedupedSnapshot;

/// A JSON path flattened with `_` separators and array indices dropped,
/// e.g. `spec_volumes_persistentVolumeClaim_claimName`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FlatKey(String);

impl FlatKey {
    pub fn new(s: impl Into<String>) -> Result<Self, EntityError> {
        let s = s.into();
        if s.is_empty() || s.split('_').any(is_index_segment) {
            return Err(EntityError::InvalidKey(s));
        }
        Ok(FlatKey(s))
    }

    fn from_segments(segments: &[&str]) -> Option<Self> {
        if segments.is_empty() {
            return None;
        }
        Some(FlatKey(segments.join("_")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Last `_`-separated segment.
    pub fn leaf(&self) -> &str {
        self.0.rsplit('_').next().unwrap_or(&self.0)
    }
}

fn is_index_segment(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

impl TryFrom<String> for FlatKey {
    type Error = EntityError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        FlatKey::new(s)
    }
}

impl From<FlatKey> for String {
    fn from(k: FlatKey) -> String {
        k.0
    }
}

impl fmt::Display for FlatKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<str> for FlatKey {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for FlatKey {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// One scalar leaf of a payload together with the object holding it.
pub(crate) struct Leaf<'a> {
    pub key: FlatKey,
    /// Field name under which the scalar sits in `parent`.
    pub name: &'a str,
    pub value: &'a Value,
    pub parent: &'a Map<String, Value>,
}

pub(crate) fn visit_leaves<'a>(payload: &'a Map<String, Value>, f: &mut impl FnMut(Leaf<'a>)) {
    let mut segments = Vec::new();
    visit_object(payload, &mut segments, f);
}

fn visit_object<'a>(obj: &'a Map<String, Value>, segments: &mut Vec<&'a str>, f: &mut impl FnMut(Leaf<'a>)) {
    for (name, value) in obj {
        let pushed = !name.is_empty() && !is_index_segment(name);
        if pushed {
            segments.push(name);
        }
        visit_value(value, name, obj, segments, f);
        if pushed {
            segments.pop();
        }
    }
}

fn visit_value<'a>(
    value: &'a Value,
    name: &'a str,
    parent: &'a Map<String, Value>,
    segments: &mut Vec<&'a str>,
    f: &mut impl FnMut(Leaf<'a>),
) {
    match value {
        Value::Object(child) => visit_object(child, segments, f),
        Value::Array(items) => {
            for item in items {
                visit_value(item, name, parent, segments, f);
            }
        }
        scalar => {
            if let Some(key) = FlatKey::from_segments(segments) {
                f(Leaf {
                    key,
                    name,
                    value: scalar,
                    parent,
                });
            }
        }
    }
}

/// Every scalar leaf as `(FlatKey, value)`, sorted by key then by value text.
/// Array elements share the index-free key, so duplicates are kept.
pub fn flatten_keys(payload: &Map<String, Value>) -> Vec<(FlatKey, Value)> {
    let mut out = Vec::new();
    visit_leaves(payload, &mut |leaf| out.push((leaf.key, leaf.value.clone())));
    out.sort_by_cached_key(|(k, v)| (k.clone(), v.to_string()));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyStat {
    pub occurrence_count: usize,
    pub distinct_value_count: usize,
}

impl KeyStat {
    pub fn diversity(&self) -> f64 {
        if self.occurrence_count == 0 {
            0.0
        } else {
            self.distinct_value_count as f64 / self.occurrence_count as f64
        }
    }
}

/// Occurrence and distinct-value counts per `(kind, FlatKey)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyStats {
    entries: BTreeMap<(String, FlatKey), KeyStat>,
}

impl KeyStats {
    pub fn get(&self, kind: &str, key: &str) -> Option<KeyStat> {
        self.entries
            .get(&(kind.to_owned(), FlatKey(key.to_owned())))
            .copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FlatKey, KeyStat)> {
        self.entries.iter().map(|((k, fk), s)| (k.as_str(), fk, *s))
    }

    pub fn kinds(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|(k, _)| k.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn profile_keys(corpus: &[DedupedSnapshot]) -> KeyStats {
    let mut acc: BTreeMap<(String, FlatKey), (usize, BTreeSet<String>)> = BTreeMap::new();
    for snap in corpus {
        visit_leaves(&snap.payload, &mut |leaf| {
            let slot = acc.entry((snap.kind.clone(), leaf.key)).or_default();
            slot.0 += 1;
            slot.1.insert(leaf.value.to_string());
        });
    }
    KeyStats {
        entries: acc
            .into_iter()
            .map(|(k, (occ, distinct))| {
                (
                    k,
                    KeyStat {
                        occurrence_count: occ,
                        distinct_value_count: distinct.len(),
                    },
                )
            })
            .collect(),
    }
}
