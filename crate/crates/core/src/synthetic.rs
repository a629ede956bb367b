//! Synthetic cluster history for demos and end-to-end tests.
//!
//! [`synthetic_cluster`] writes six polls, five minutes apart, of a small
//! cluster in which each namespace hosts one fault scenario plus healthy
//! neighbours. Every scenario yields one labeled incident whose ground-truth
//! entity lies on the top-ranked metapath for the kinds the rule oracle
//! predicts.

use chrono::Duration;
use serde_json::{json, Value};

use crate::driver::{CorpusRow, GroundTruth, Incident};
use crate::ingest::RawSnapshot;
use crate::time::{parse_timestamp, Timestamp};

pub const POLL_COUNT: usize = 6;
pub const POLL_MINUTES: i64 = 5;
/// Poll at which incident Events first show up.
pub const EVENT_POLL: usize = 2;
/// Minutes after the first poll at which incidents are reported.
pub const INCIDENT_MINUTES: i64 = 20;
pub const NODE: &str = "node-1";
pub const NFS_SERVER: &str = "172.16.112.63";

/// Incident types the generator can produce.
pub const SCENARIOS: [&str; 9] = [
    "ExceedQuotaJob",
    "ExceedQuotaReplicaSet",
    "ExceedQuotaStatefulSet",
    "NoSuchFileDir",
    "ConfigMapNotFound",
    "SecretNotFound",
    "UnboundPVC",
    "ServiceAccountNotFound",
    "NoVolumeToMount",
];

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<RawSnapshot>,
    pub incidents: Vec<CorpusRow>,
}

impl SyntheticCorpus {
    pub fn incident(&self, type_label: &str) -> Option<Incident> {
        self.incidents
            .iter()
            .position(|r| r.type_label.as_deref() == Some(type_label))
            .map(|i| self.incidents[i].incident(i))
    }

    pub fn row(&self, type_label: &str) -> Option<&CorpusRow> {
        self.incidents
            .iter()
            .find(|r| r.type_label.as_deref() == Some(type_label))
    }

    /// Newline-delimited snapshot envelopes.
    pub fn records_jsonl(&self) -> String {
        let mut buf = Vec::new();
        crate::ingest::write_snapshot_stream(&mut buf, &self.records).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn corpus_jsonl(&self) -> String {
        self.incidents
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }
}

pub fn base_time() -> Timestamp {
    parse_timestamp("2024-03-01T10:00:00Z").expect("static timestamp")
}

pub fn incident_time() -> Timestamp {
    base_time() + Duration::minutes(INCIDENT_MINUTES)
}

fn poll_time(k: usize) -> Timestamp {
    base_time() + Duration::minutes(POLL_MINUTES * k as i64)
}

pub fn uid_for(kind: &str, namespace: Option<&str>, name: &str) -> String {
    format!(
        "{}-{}-{}",
        kind.to_lowercase(),
        namespace.unwrap_or("cluster"),
        name
    )
}

fn metadata(kind: &str, namespace: Option<&str>, name: &str) -> Value {
    let mut m = json!({"name": name, "uid": uid_for(kind, namespace, name)});
    if let Some(ns) = namespace {
        m["namespace"] = json!(ns);
    }
    m
}

fn object(kind: &str, namespace: Option<&str>, name: &str, rest: Value) -> Value {
    let mut v = json!({"apiVersion": "v1", "kind": kind, "metadata": metadata(kind, namespace, name)});
    if let Value::Object(extra) = rest {
        for (k, val) in extra {
            if k == "metadata" {
                if let Value::Object(more) = val {
                    for (mk, mv) in more {
                        v["metadata"][mk] = mv;
                    }
                }
            } else {
                v[k] = val;
            }
        }
    }
    v
}

fn owner(kind: &str, namespace: &str, name: &str) -> Value {
    json!({"metadata": {"ownerReferences": [
        {"kind": kind, "name": name, "uid": uid_for(kind, Some(namespace), name)}
    ]}})
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(am), Value::Object(bm)) = (&mut a, b) {
        for (k, v) in bm {
            match am.get_mut(&k) {
                Some(existing @ Value::Object(_)) if v.is_object() => {
                    *existing = merge(existing.take(), v);
                }
                _ => {
                    am.insert(k, v);
                }
            }
        }
    }
    a
}

struct Writer {
    records: Vec<RawSnapshot>,
    rows: Vec<CorpusRow>,
}

impl Writer {
    fn push(&mut self, k: usize, kind: &str, source: &str, mut payload: Value) {
        if payload.get("metadata").is_some() {
            // Bumped on every poll; dedup must see through it.
            payload["metadata"]["resourceVersion"] = json!(format!("{}", 1000 + k));
        }
        let Value::Object(payload) = payload else {
            unreachable!("payloads are objects")
        };
        self.records.push(RawSnapshot {
            collected_at: poll_time(k),
            source: source.into(),
            kind: kind.into(),
            payload,
        });
    }

    /// The same object on every poll.
    fn steady(&mut self, payload: Value) {
        self.polled(payload, |_, p| p.clone());
    }

    fn polled(&mut self, payload: Value, at: impl Fn(usize, &Value) -> Value) {
        let kind = payload["kind"].as_str().expect("kind").to_owned();
        for k in 0..POLL_COUNT {
            self.push(k, &kind, "etcd", at(k, &payload));
        }
    }

    fn nfs(&mut self, path: &str, exists: bool) {
        for k in 0..POLL_COUNT {
            self.push(
                k,
                "nfs",
                "nfs-probe",
                json!({"server": NFS_SERVER, "path": path, "exists": exists}),
            );
        }
    }

    fn namespace(&mut self, ns: &str) {
        self.steady(object(
            "Namespace",
            None,
            ns,
            json!({"status": {"phase": "Active"}}),
        ));
    }

    fn pod(&mut self, ns: &str, name: &str, phase: &str, spec: Value, extra: Value) {
        let spec = merge(
            json!({"nodeName": NODE, "containers": [{"name": "main", "image": format!("registry.local/{name}:1.0")}]}),
            spec,
        );
        self.steady(object(
            "Pod",
            Some(ns),
            name,
            merge(json!({"spec": spec, "status": {"phase": phase}}), extra),
        ));
    }

    /// Warning Event about `(kind, name)` present from [`EVENT_POLL`] on, its
    /// count growing each poll.
    fn event(&mut self, ns: &str, kind: &str, name: &str, reason: &str, message: &str) {
        let ev_name = format!("{name}.{}", reason.to_lowercase());
        let base = object(
            "Event",
            Some(ns),
            &ev_name,
            json!({
                "involvedObject": {"kind": kind, "name": name, "namespace": ns, "uid": uid_for(kind, Some(ns), name)},
                "reason": reason,
                "message": message,
                "type": "Warning",
                "source": {"component": "controller"},
            }),
        );
        for k in EVENT_POLL..POLL_COUNT {
            let mut p = base.clone();
            p["count"] = json!(k - EVENT_POLL + 1);
            p["lastTimestamp"] = json!(crate::time::format_timestamp(&poll_time(k)));
            self.push(k, "Event", "etcd", p);
        }
    }

    fn normal_event(&mut self, ns: &str, kind: &str, name: &str) {
        let base = object(
            "Event",
            Some(ns),
            &format!("{name}.scheduled"),
            json!({
                "involvedObject": {"kind": kind, "name": name, "namespace": ns, "uid": uid_for(kind, Some(ns), name)},
                "reason": "Scheduled",
                "message": format!("Successfully assigned {ns}/{name} to {NODE}"),
                "type": "Normal",
            }),
        );
        self.push(0, "Event", "etcd", base);
    }

    fn incident(&mut self, type_label: &str, ns: &str, message: &str, truth: GroundTruth) {
        self.rows.push(CorpusRow {
            id: Some(format!("{}-1", kebab(type_label))),
            message: message.into(),
            namespace: ns.into(),
            timestamp: incident_time(),
            reason: None,
            type_label: Some(type_label.into()),
            ground_truth: truth,
        });
    }
}

fn kebab(s: &str) -> String {
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if c.is_ascii_uppercase() && i > 0 {
            out.push('-');
        }
        out.push(c.to_ascii_lowercase());
    }
    out
}

fn named_truth(kind: &str, ns: Option<&str>, name: &str) -> GroundTruth {
    GroundTruth {
        kind: kind.into(),
        name: Some(name.into()),
        namespace: ns.map(str::to_owned),
        uid: None,
        composite: None,
    }
}

fn quota(w: &mut Writer, ns: &str, name: &str, hard: Value, used_at: impl Fn(usize) -> Value) {
    let base = object(
        "ResourceQuota",
        Some(ns),
        name,
        json!({"spec": {"hard": hard.clone()}, "status": {"hard": hard}}),
    );
    w.polled(base, |k, p| {
        let mut p = p.clone();
        p["status"]["used"] = used_at(k);
        p
    });
}

/// Pods climb to the 50-pod limit by [`EVENT_POLL`].
fn pods_used(k: usize) -> Value {
    json!({"pods": (48 + k.min(EVENT_POLL)).to_string()})
}

fn storage_quota(w: &mut Writer, ns: &str) {
    quota(
        w,
        ns,
        "storage-quota",
        json!({"requests.storage": "100Gi"}),
        |_| json!({"requests.storage": "10Gi"}),
    );
}

fn exceed_quota_job(w: &mut Writer) {
    let ns = "quota-job";
    w.namespace(ns);
    let job = "es-cronjob-1607637300";
    w.steady(object(
        "Job",
        Some(ns),
        job,
        json!({"apiVersion": "batch/v1", "spec": {"template": {"spec": {"containers": [{"name": "es", "image": "registry.local/es-cron:2"}]}}}, "status": {"active": 0}}),
    ));
    let rq = format!("compute-resources-{ns}");
    quota(w, ns, &rq, json!({"pods": "50"}), pods_used);
    storage_quota(w, ns);
    w.pod(ns, "indexer-0", "Running", json!({}), json!({}));
    w.normal_event(ns, "Pod", "indexer-0");
    let msg = format!(
        "Error creating: pods \"{job}-fpb68\" is forbidden: exceeded quota: {rq}, requested: pods=1, used: pods=50, limited: pods=50"
    );
    w.event(ns, "Job", job, "FailedCreate", &msg);
    w.incident(
        "ExceedQuotaJob",
        ns,
        &msg,
        named_truth("ResourceQuota", Some(ns), &rq),
    );
}

fn exceed_quota_replicaset(w: &mut Writer) {
    let ns = "quota-rs";
    w.namespace(ns);
    w.steady(object(
        "Deployment",
        Some(ns),
        "api",
        json!({"apiVersion": "apps/v1", "spec": {"replicas": 3}}),
    ));
    let rs = "api-7d9f8c";
    w.steady(object(
        "ReplicaSet",
        Some(ns),
        rs,
        merge(
            owner("Deployment", ns, "api"),
            json!({"apiVersion": "apps/v1", "spec": {"replicas": 3}, "status": {"replicas": 2}}),
        ),
    ));
    let rq = format!("mem-quota-{ns}");
    quota(
        w,
        ns,
        &rq,
        json!({"limits.memory": "5400Gi"}),
        |k| json!({"limits.memory": if k < EVENT_POLL { "5340Gi" } else { "5372Gi" }}),
    );
    storage_quota(w, ns);
    w.pod(
        ns,
        &format!("{rs}-a1"),
        "Running",
        json!({}),
        owner("ReplicaSet", ns, rs),
    );
    let msg = format!(
        "Error creating: pods \"{rs}-x2x9k\" is forbidden: exceeded quota: {rq}, requested: limits.memory=32Gi, used: limits.memory=5372Gi, limited: limits.memory=5400Gi"
    );
    w.event(ns, "ReplicaSet", rs, "FailedCreate", &msg);
    w.incident(
        "ExceedQuotaReplicaSet",
        ns,
        &msg,
        named_truth("ResourceQuota", Some(ns), &rq),
    );
}

fn exceed_quota_statefulset(w: &mut Writer) {
    let ns = "quota-sts";
    w.namespace(ns);
    let sts = "es-c1";
    w.steady(object(
        "StatefulSet",
        Some(ns),
        sts,
        json!({"apiVersion": "apps/v1", "spec": {"replicas": 1}}),
    ));
    let rq = format!("compute-resources-{ns}");
    quota(w, ns, &rq, json!({"pods": "50"}), pods_used);
    storage_quota(w, ns);
    let msg = format!(
        "create Pod {sts}-0 in StatefulSet {sts} failed error: pods \"{sts}-0\" is forbidden: exceeded quota: {rq}, requested: pods=1, used: pods=50, limited: pods=50"
    );
    w.event(ns, "StatefulSet", sts, "FailedCreate", &msg);
    w.incident(
        "ExceedQuotaStatefulSet",
        ns,
        &msg,
        named_truth("ResourceQuota", Some(ns), &rq),
    );
}

/// Pod -> PVC -> PV -> nfs chains. Every bound claim has both `volumeName`
/// and a matching PV `claimRef`.
fn nfs_volume(
    w: &mut Writer,
    ns: &str,
    pod: &str,
    pod_phase: &str,
    claim: &str,
    pv: &str,
    path: &str,
    exists: bool,
) {
    w.steady(object(
        "PersistentVolumeClaim",
        Some(ns),
        claim,
        json!({"spec": {"volumeName": pv, "accessModes": ["ReadWriteMany"]}, "status": {"phase": "Bound"}}),
    ));
    w.steady(object(
        "PersistentVolume",
        None,
        pv,
        json!({"spec": {
                "claimRef": {"kind": "PersistentVolumeClaim", "name": claim, "namespace": ns,
                             "uid": uid_for("PersistentVolumeClaim", Some(ns), claim)},
                "nfs": {"server": NFS_SERVER, "path": path},
                "capacity": {"storage": "10Gi"}},
               "status": {"phase": "Bound"}}),
    ));
    w.nfs(path, exists);
    w.pod(
        ns,
        pod,
        pod_phase,
        json!({"volumes": [{"name": "data", "persistentVolumeClaim": {"claimName": claim}}]}),
        json!({}),
    );
}

fn no_such_file_dir(w: &mut Writer) {
    let ns = "nfs-app";
    w.namespace(ns);
    let path = "/mnt/k8s_nfs_pv/nfs-app-data-web-0";
    nfs_volume(w, ns, "web-0", "Pending", "data-web-0", "pv-nfs-01", path, false);
    nfs_volume(
        w,
        ns,
        "web-1",
        "Running",
        "data-web-1",
        "pv-nfs-02",
        "/mnt/k8s_nfs_pv/nfs-app-data-web-1",
        true,
    );
    let tail = format!(
        "MountVolume.SetUp failed for volume \"pv-nfs-01\" : mount failed: exit status 32 Mounting command: mount Mounting arguments: -t nfs {NFS_SERVER}:{path} /var/lib/kubelet/pods/web-0/volumes/kubernetes.io~nfs/pv-nfs-01 Output: mount.nfs: mounting {NFS_SERVER}:{path} failed, reason given by server: No such file or directory"
    );
    w.event(
        ns,
        "Pod",
        "web-0",
        "FailedMount",
        &format!("(combined from similar events): {tail}"),
    );
    let mut composite = std::collections::BTreeMap::new();
    composite.insert("server".to_owned(), NFS_SERVER.to_owned());
    composite.insert("path".to_owned(), path.to_owned());
    w.incident(
        "NoSuchFileDir",
        ns,
        &tail,
        GroundTruth {
            kind: "nfs".into(),
            name: None,
            namespace: None,
            uid: None,
            composite: Some(composite),
        },
    );
}

fn configmap_not_found(w: &mut Writer) {
    let ns = "cm-app";
    w.namespace(ns);
    w.steady(object(
        "ConfigMap",
        Some(ns),
        "worker-defaults",
        json!({"data": {"threads": "4"}}),
    ));
    w.pod(
        ns,
        "worker-5c9d",
        "Pending",
        json!({"volumes": [
            {"name": "defaults", "configMap": {"name": "worker-defaults"}},
            {"name": "settings", "configMap": {"name": "worker-settings"}}
        ]}),
        json!({}),
    );
    w.pod(
        ns,
        "worker-7f1a",
        "Running",
        json!({"volumes": [{"name": "defaults", "configMap": {"name": "worker-defaults"}}]}),
        json!({}),
    );
    let msg = "MountVolume.SetUp failed for volume \"settings\" : configmap \"worker-settings\" not found";
    w.event(ns, "Pod", "worker-5c9d", "FailedMount", msg);
    w.incident(
        "ConfigMapNotFound",
        ns,
        msg,
        named_truth("ConfigMap", Some(ns), "worker-settings"),
    );
}

fn secret_not_found(w: &mut Writer) {
    let ns = "secret-app";
    w.namespace(ns);
    w.steady(object(
        "Secret",
        Some(ns),
        "registry-creds",
        json!({"type": "Opaque"}),
    ));
    w.pod(
        ns,
        "gateway-0",
        "Pending",
        json!({"volumes": [
            {"name": "creds", "secret": {"secretName": "registry-creds"}},
            {"name": "tls", "secret": {"secretName": "tls-cert-secret"}}
        ]}),
        json!({}),
    );
    let msg = "MountVolume.SetUp failed for volume \"tls\" : secret \"tls-cert-secret\" not found";
    w.event(ns, "Pod", "gateway-0", "FailedMount", msg);
    w.incident(
        "SecretNotFound",
        ns,
        msg,
        named_truth("Secret", Some(ns), "tls-cert-secret"),
    );
}

fn unbound_pvc(w: &mut Writer) {
    let ns = "pvc-app";
    w.namespace(ns);
    w.steady(object(
        "PersistentVolumeClaim",
        Some(ns),
        "db-data",
        json!({"spec": {"accessModes": ["ReadWriteOnce"], "resources": {"requests": {"storage": "50Gi"}}}, "status": {"phase": "Pending"}}),
    ));
    w.pod(
        ns,
        "db-0",
        "Pending",
        json!({"volumes": [{"name": "data", "persistentVolumeClaim": {"claimName": "db-data"}}]}),
        json!({}),
    );
    let msg = "pod has unbound immediate PersistentVolumeClaims";
    w.event(ns, "Pod", "db-0", "FailedScheduling", msg);
    w.incident(
        "UnboundPVC",
        ns,
        &format!("{msg} (repeated 19 times)"),
        named_truth("PersistentVolumeClaim", Some(ns), "db-data"),
    );
}

fn service_account_not_found(w: &mut Writer) {
    let ns = "sa-app";
    w.namespace(ns);
    w.steady(object("ServiceAccount", Some(ns), "default", json!({})));
    w.steady(object(
        "Deployment",
        Some(ns),
        "batch",
        json!({"apiVersion": "apps/v1", "spec": {"replicas": 1}}),
    ));
    let rs = "batch-6f7d";
    w.steady(object(
        "ReplicaSet",
        Some(ns),
        rs,
        merge(
            owner("Deployment", ns, "batch"),
            json!({"apiVersion": "apps/v1", "spec": {"replicas": 1, "template": {"spec": {"serviceAccountName": "batch-runner"}}}, "status": {"replicas": 0}}),
        ),
    ));
    let msg = format!(
        "Error creating: pods \"{rs}-\" is forbidden: error looking up service account {ns}/batch-runner: serviceaccount \"batch-runner\" not found"
    );
    w.event(ns, "ReplicaSet", rs, "FailedCreate", &msg);
    w.incident(
        "ServiceAccountNotFound",
        ns,
        &msg,
        named_truth("ServiceAccount", Some(ns), "batch-runner"),
    );
}

fn no_volume_to_mount(w: &mut Writer) {
    let ns = "cron-app";
    w.namespace(ns);
    w.steady(object(
        "ConfigMap",
        Some(ns),
        "es-crontab-env",
        json!({"data": {"ES_HOST": "es:9200"}}),
    ));
    w.pod(
        ns,
        "es-crontab-job-28",
        "Failed",
        json!({"volumes": [
            {"name": "env", "configMap": {"name": "es-crontab-env"}},
            {"name": "white-list", "configMap": {"name": "gen-white-list-conf"}}
        ]}),
        json!({}),
    );
    let msg = "Error: cannot find volume \"gen-white-list-conf\" to mount into container \"es-crontab-job\"";
    w.event(ns, "Pod", "es-crontab-job-28", "Failed", msg);
    w.incident(
        "NoVolumeToMount",
        ns,
        msg,
        named_truth("ConfigMap", Some(ns), "gen-white-list-conf"),
    );
}

/// The full synthetic cluster with one incident per entry of [`SCENARIOS`].
pub fn synthetic_cluster() -> SyntheticCorpus {
    synthetic_subset(&SCENARIOS)
}

/// Only the named scenarios (plus the shared node).
pub fn synthetic_subset(types: &[&str]) -> SyntheticCorpus {
    let mut w = Writer {
        records: Vec::new(),
        rows: Vec::new(),
    };
    w.steady(object(
        "Node",
        None,
        NODE,
        json!({"status": {"conditions": [{"type": "Ready", "status": "True"}]}}),
    ));
    for t in types {
        match *t {
            "ExceedQuotaJob" => exceed_quota_job(&mut w),
            "ExceedQuotaReplicaSet" => exceed_quota_replicaset(&mut w),
            "ExceedQuotaStatefulSet" => exceed_quota_statefulset(&mut w),
            "NoSuchFileDir" => no_such_file_dir(&mut w),
            "ConfigMapNotFound" => configmap_not_found(&mut w),
            "SecretNotFound" => secret_not_found(&mut w),
            "UnboundPVC" => unbound_pvc(&mut w),
            "ServiceAccountNotFound" => service_account_not_found(&mut w),
            "NoVolumeToMount" => no_volume_to_mount(&mut w),
            other => panic!("unknown synthetic scenario {other}"),
        }
    }
    w.records.sort_by_key(|a| a.collected_at);
    SyntheticCorpus {
        records: w.records,
        incidents: w.rows,
    }
}
