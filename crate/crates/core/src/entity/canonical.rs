use std::collections::BTreeMap;

use super::{EntityError, EntityRef, Identity};
use crate::ingest::DedupedSnapshot;
use crate::time::TimeRange;

type NameKey = (String, Option<String>, String);

/// `(kind, namespace, name) -> uid` lookup built from the observed corpus,
/// with the observation window of each uid.
#[derive(Debug, Clone, Default)]
pub struct IdentityIndex {
    by_name: BTreeMap<NameKey, BTreeMap<String, TimeRange>>,
}

impl IdentityIndex {
    pub fn build(corpus: &[DedupedSnapshot]) -> Self {
        let mut by_name: BTreeMap<NameKey, BTreeMap<String, TimeRange>> = BTreeMap::new();
        for snap in corpus {
            let (Identity::Uid(uid), Some(name)) = (&snap.identity.identity, &snap.identity.name) else {
                continue;
            };
            let range = TimeRange::new(snap.t_min, snap.t_max);
            by_name
                .entry((snap.kind.clone(), snap.identity.namespace.clone(), name.clone()))
                .or_default()
                .entry(uid.clone())
                .and_modify(|r| *r = r.envelope(&range))
                .or_insert(range);
        }
        Self { by_name }
    }

    fn candidates(
        &self,
        kind: &str,
        namespace: &Option<String>,
        name: &str,
    ) -> Option<&BTreeMap<String, TimeRange>> {
        self.by_name
            .get(&(kind.to_owned(), namespace.clone(), name.to_owned()))
            .or_else(|| {
                // Cluster-scoped kinds missing from the configured list still resolve.
                namespace
                    .as_ref()
                    .and_then(|_| self.by_name.get(&(kind.to_owned(), None, name.to_owned())))
            })
    }

    /// Upgrade a name-based native reference to uid form.
    ///
    /// `during` is the validity range of the referencing snapshot; it picks
    /// between successive incarnations of the same name. Incarnations whose
    /// lifetimes overlap are reported as ambiguous.
    pub fn canonicalize(&self, r: &EntityRef, during: Option<TimeRange>) -> Result<EntityRef, EntityError> {
        let Identity::Name { namespace, name } = &r.identity else {
            let mut out = r.clone();
            out.unresolved = false;
            return Ok(out);
        };
        let Some(cands) = self.candidates(&r.kind, namespace, name) else {
            let mut out = r.clone();
            out.unresolved = true;
            return Ok(out);
        };
        let chosen = if cands.len() == 1 {
            cands.keys().next().expect("non-empty")
        } else {
            let ranges: Vec<(&String, &TimeRange)> = cands.iter().collect();
            let overlapping = ranges
                .iter()
                .enumerate()
                .any(|(i, a)| ranges[i + 1..].iter().any(|b| a.1.overlaps(b.1)));
            if overlapping {
                return Err(EntityError::Ambiguous {
                    kind: r.kind.clone(),
                    namespace: namespace.clone(),
                    name: name.clone(),
                    candidates: cands.keys().cloned().collect(),
                });
            }
            pick_incarnation(&ranges, during)
        };
        let ns = self
            .by_name
            .contains_key(&(r.kind.clone(), namespace.clone(), name.clone()))
            .then(|| namespace.clone())
            .flatten();
        Ok(EntityRef::uid(&r.kind, chosen).with_hints(Some(name), ns.as_deref()))
    }
}

fn pick_incarnation<'a>(ranges: &[(&'a String, &TimeRange)], during: Option<TimeRange>) -> &'a String {
    let latest = || {
        ranges
            .iter()
            .max_by_key(|(_, r)| r.t_min)
            .map(|(u, _)| *u)
            .expect("non-empty")
    };
    let Some(during) = during else {
        return latest();
    };
    if let Some((u, _)) = ranges.iter().find(|(_, r)| r.overlaps(&during)) {
        return u;
    }
    ranges
        .iter()
        .filter(|(_, r)| r.t_min <= during.t_max)
        .max_by_key(|(_, r)| r.t_min)
        .map(|(u, _)| *u)
        .unwrap_or_else(|| {
            ranges
                .iter()
                .min_by_key(|(_, r)| r.t_min)
                .map(|(u, _)| *u)
                .expect("non-empty")
        })
}

/// [`IdentityIndex::canonicalize`] without a time context.
pub fn canonicalize(r: &EntityRef, index: &IdentityIndex) -> Result<EntityRef, EntityError> {
    index.canonicalize(r, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::CatalogConfig;
    use crate::time::parse_timestamp;
    use serde_json::json;
    use std::collections::BTreeMap;

    fn snap(kind: &str, uid: &str, ns: Option<&str>, name: &str, from: &str, to: &str) -> DedupedSnapshot {
        let mut meta = json!({"uid": uid, "name": name});
        if let Some(ns) = ns {
            meta["namespace"] = json!(ns);
        }
        let payload = json!({ "metadata": meta }).as_object().unwrap().clone();
        DedupedSnapshot {
            identity: CatalogConfig::default()
                .identity_rules()
                .primary_identity(kind, &payload)
                .unwrap(),
            kind: kind.into(),
            t_min: parse_timestamp(from).unwrap(),
            t_max: parse_timestamp(to).unwrap(),
            payload,
            run_length: 1,
        }
    }

    const T0: &str = "2020-12-10T00:00:00Z";
    const T1: &str = "2020-12-10T00:10:00Z";
    const T2: &str = "2020-12-10T00:20:00Z";
    const T3: &str = "2020-12-10T00:30:00Z";

    #[test]
    fn name_reference_upgrades_to_uid() {
        let idx = IdentityIndex::build(&[snap(
            "PersistentVolumeClaim",
            "pvc-uid",
            Some("ns1"),
            "data-0",
            T0,
            T1,
        )]);
        let r = EntityRef::named("PersistentVolumeClaim", Some("ns1"), "data-0");
        let c = canonicalize(&r, &idx).unwrap();
        assert_eq!(c, EntityRef::uid("PersistentVolumeClaim", "pvc-uid"));
        assert_eq!(c.name.as_deref(), Some("data-0"));
        assert_eq!(c.namespace.as_deref(), Some("ns1"));
        assert!(!c.unresolved);
    }

    #[test]
    fn namespace_scopes_resolution() {
        let idx = IdentityIndex::build(&[snap(
            "PersistentVolumeClaim",
            "pvc-uid",
            Some("ns2"),
            "data-0",
            T0,
            T1,
        )]);
        let r = EntityRef::named("PersistentVolumeClaim", Some("ns1"), "data-0");
        assert!(canonicalize(&r, &idx).unwrap().unresolved);
    }

    #[test]
    fn uid_reference_is_unchanged() {
        let idx = IdentityIndex::default();
        let r = EntityRef::uid("Pod", "u1");
        assert_eq!(canonicalize(&r, &idx).unwrap(), r);
    }

    #[test]
    fn unobserved_reference_is_flagged_unresolved() {
        let idx = IdentityIndex::build(&[snap("Pod", "p", Some("ns1"), "web", T0, T1)]);
        let r = EntityRef::named("PersistentVolumeClaim", Some("ns1"), "missing");
        let c = canonicalize(&r, &idx).unwrap();
        assert_eq!(c, r);
        assert!(c.unresolved);
        assert!(canonicalize(&c, &idx).unwrap().unresolved);
    }

    #[test]
    fn overlapping_incarnations_are_ambiguous() {
        let idx = IdentityIndex::build(&[
            snap("ConfigMap", "a", Some("ns1"), "cfg", T0, T2),
            snap("ConfigMap", "b", Some("ns1"), "cfg", T1, T3),
        ]);
        let err = canonicalize(&EntityRef::named("ConfigMap", Some("ns1"), "cfg"), &idx).unwrap_err();
        match err {
            EntityError::Ambiguous { candidates, .. } => assert_eq!(candidates, vec!["a", "b"]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn successive_incarnations_follow_the_reference_time() {
        let idx = IdentityIndex::build(&[
            snap("ConfigMap", "a", Some("ns1"), "cfg", T0, T0),
            snap("ConfigMap", "b", Some("ns1"), "cfg", T2, T3),
        ]);
        let r = EntityRef::named("ConfigMap", Some("ns1"), "cfg");
        let at = |t: &str| Some(TimeRange::instant(parse_timestamp(t).unwrap()));
        assert_eq!(idx.canonicalize(&r, at(T0)).unwrap().uid_str(), Some("a"));
        assert_eq!(idx.canonicalize(&r, at(T1)).unwrap().uid_str(), Some("a"));
        assert_eq!(idx.canonicalize(&r, at(T3)).unwrap().uid_str(), Some("b"));
    }

    #[test]
    fn composite_fields_stay_sorted() {
        let mut fields = BTreeMap::new();
        fields.insert("server".to_string(), "s".to_string());
        fields.insert("path".to_string(), "/p".to_string());
        let r = EntityRef::composite("nfs", fields);
        let c = canonicalize(&r, &IdentityIndex::default()).unwrap();
        assert_eq!(c.key(), "nfs#path=/p,server=s");
    }

    #[test]
    fn cluster_scoped_lookup_falls_back_to_no_namespace() {
        let idx = IdentityIndex::build(&[snap("Namespace", "ns-uid", None, "ns1", T0, T1)]);
        let r = EntityRef::named("Namespace", Some("ns1"), "ns1");
        assert_eq!(canonicalize(&r, &idx).unwrap().uid_str(), Some("ns-uid"));
    }
}
