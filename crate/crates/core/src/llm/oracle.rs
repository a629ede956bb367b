//! Deterministic stand-in for a language model.
//!
//! [`RuleOracle`] ignores the rendered prompt and answers every stage from the
//! structured `context` of the request using fixed lookup tables. It never
//! touches the network, so end-to-end runs are reproducible.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Value};

use super::backend::{BackendError, Completion, CompletionRequest, LlmBackend, Stage};
use super::stages::NamingConvention;

/// Message pattern, implied root-cause kind and intermediate kinds.
const LOCATOR_RULES: &[(&str, &str, &[&str])] = &[
    (r"exceeded quota", "ResourceQuota", &["Namespace"]),
    (
        r"(?i)serviceaccount \S+ not found|service account",
        "ServiceAccount",
        &[],
    ),
    (
        r#"(?i)configmap "[^"]*" not found|failed to sync configmap cache"#,
        "ConfigMap",
        &[],
    ),
    (
        r#"(?i)secret "[^"]*" not found|failed to sync secret cache"#,
        "Secret",
        &[],
    ),
    (
        r"(?i)mount\.nfs|no such file or directory|stale nfs file handle",
        "nfs",
        &["PersistentVolumeClaim", "PersistentVolume"],
    ),
    (
        r"unbound immediate PersistentVolumeClaims",
        "PersistentVolumeClaim",
        &["PersistentVolume"],
    ),
    (
        r"(?i)diskpressure|disk pressure|insufficient (cpu|memory)|outof(cpu|memory)",
        "Node",
        &[],
    ),
    (
        r"(?i)pull access denied|manifest unknown|not found: image|errimagepull",
        "image",
        &[],
    ),
    (r"(?i)network is unreachable", "Node", &[]),
];

fn locator_rules() -> &'static [(Regex, &'static str, &'static [&'static str])] {
    static RULES: OnceLock<Vec<(Regex, &str, &[&str])>> = OnceLock::new();
    RULES.get_or_init(|| {
        LOCATOR_RULES
            .iter()
            .map(|(p, k, i)| (Regex::new(p).expect("locator rule"), *k, *i))
            .collect()
    })
}

fn quoted_names(message: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""([^"]+)""#).expect("regex"))
        .captures_iter(message)
        .map(|c| c[1].to_owned())
        .collect()
}

/// Parse a Kubernetes resource quantity such as `50`, `500m`, `32Gi` or `1.5k`.
pub fn parse_quantity(text: &str) -> Option<f64> {
    let t = text.trim();
    let split = t
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+'))
        .unwrap_or(t.len());
    let (num, suffix) = t.split_at(split);
    let base: f64 = num.parse().ok()?;
    let factor = match suffix {
        "" => 1.0,
        "m" => 1e-3,
        "k" => 1e3,
        "M" => 1e6,
        "G" => 1e9,
        "T" => 1e12,
        "P" => 1e15,
        "E" => 1e18,
        "Ki" => 1024f64,
        "Mi" => 1024f64.powi(2),
        "Gi" => 1024f64.powi(3),
        "Ti" => 1024f64.powi(4),
        "Pi" => 1024f64.powi(5),
        "Ei" => 1024f64.powi(6),
        _ => return None,
    };
    Some(base * factor)
}

fn quantity_value(v: &Value) -> Option<f64> {
    match v {
        Value::String(s) => parse_quantity(s),
        Value::Number(n) => n.as_f64(),
        _ => None,
    }
}

/// `requested: pods=1, limits.memory=32Gi` pairs from a quota message.
fn requested_amounts(message: &str) -> BTreeMap<String, f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"requested: ([^,]+(?:, [^,:=]+=[^,]+)*)").expect("regex"));
    let mut out = BTreeMap::new();
    if let Some(c) = re.captures(message) {
        for pair in c[1].split(", ") {
            if let Some((k, v)) = pair.split_once('=') {
                if let Some(q) = parse_quantity(v) {
                    out.insert(k.trim().to_owned(), q);
                }
            }
        }
    }
    out
}

fn fragments_doc(context: &Value) -> Value {
    let frags: Vec<super::super::query::Fragment> = context
        .get("fragments")
        .cloned()
        .and_then(|v| serde_json::from_value(v).ok())
        .unwrap_or_default();
    super::stages::fragments_document(&frags)
}

fn escape_pointer(seg: &str) -> String {
    seg.replace('~', "~0").replace('/', "~1")
}

/// One summarizer finding with the severity the report stage ranks by.
struct Signal {
    severity: u8,
    text: String,
    cited: Vec<String>,
}

fn quota_signal(doc: &Value, message: &str) -> Option<Signal> {
    let used = doc.pointer("/status/used")?.as_object()?;
    let (hard_ptr, hard) = ["/status/hard", "/spec/hard"]
        .into_iter()
        .find_map(|p| doc.pointer(p).and_then(Value::as_object).map(|h| (p, h)))?;
    let requested = requested_amounts(message);
    for (res, used_v) in used {
        let (Some(u), Some(h)) = (quantity_value(used_v), hard.get(res).and_then(quantity_value)) else {
            continue;
        };
        let req = requested.get(res).copied().unwrap_or(0.0);
        if u >= h || (req > 0.0 && u + req > h) {
            let text = if u >= h {
                format!(
                    "The quota on {res} is exhausted: used {} of a hard limit of {}.",
                    used_v_text(used_v),
                    used_v_text(&hard[res])
                )
            } else {
                format!(
                    "The quota on {res} is exhausted for this request: used {} plus the requested amount exceeds the hard limit of {}.",
                    used_v_text(used_v),
                    used_v_text(&hard[res])
                )
            };
            return Some(Signal {
                severity: 3,
                text,
                cited: vec![
                    format!("/status/used/{}", escape_pointer(res)),
                    format!("{hard_ptr}/{}", escape_pointer(res)),
                ],
            });
        }
    }
    None
}

fn used_v_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `name` occurs in `message` as a whole token, not inside a longer name.
fn mentions(message: &str, name: &str) -> bool {
    let part_of_name = |c: char| c.is_alphanumeric() || matches!(c, '-' | '.' | '_');
    !name.is_empty()
        && message.match_indices(name).any(|(i, _)| {
            let before = message[..i].chars().next_back();
            let mut rest = message[i + name.len()..].chars();
            // A trailing period ends the sentence unless a name continues.
            let after = match rest.next() {
                Some('.') => rest.next().filter(|c| c.is_alphanumeric()),
                c => c,
            };
            !before.is_some_and(part_of_name) && !after.is_some_and(part_of_name)
        })
}

fn summarize(context: &Value) -> Value {
    let message = context.get("message").and_then(Value::as_str).unwrap_or_default();
    let entity = context.get("entity").cloned().unwrap_or(Value::Null);
    let kind = entity.get("kind").and_then(Value::as_str).unwrap_or_default();
    let name = entity.get("name").and_then(Value::as_str).unwrap_or_default();
    let display = entity.get("display").and_then(Value::as_str).unwrap_or(kind);
    let doc = fragments_doc(context);
    let lower = message.to_lowercase();

    let mut signals = Vec::new();
    if let Some(s) = quota_signal(&doc, message) {
        signals.push(s);
    }
    if doc.pointer("/exists") == Some(&Value::Bool(false)) {
        signals.push(Signal {
            severity: 3,
            text: format!("The recorded state shows that {display} does not exist."),
            cited: vec!["/exists".into()],
        });
    }
    if let Some(phase) = doc.pointer("/status/phase").and_then(Value::as_str) {
        if matches!(phase, "Pending" | "Lost" | "Failed") {
            signals.push(Signal {
                severity: 2,
                text: format!("Its phase is {phase}, which is a problematic phase."),
                cited: vec!["/status/phase".into()],
            });
        } else if phase == "Bound" && lower.contains("unbound") && kind == "PersistentVolumeClaim" {
            signals.push(Signal {
                severity: 2,
                text:
                    "Its phase is Bound, which is inconsistent with the message reporting an unbound claim."
                        .into(),
                cited: vec!["/status/phase".into()],
            });
        }
    }
    if mentions(message, name) {
        signals.push(Signal {
            severity: 1,
            text: format!("The message names {display} directly."),
            cited: Vec::new(),
        });
    }
    if signals.is_empty() {
        return json!({
            "related": false,
            "observations": format!("Nothing in the state of {display} relates to the message."),
            "cited": [],
        });
    }
    signals.sort_by_key(|s| std::cmp::Reverse(s.severity));
    let cited: Vec<String> = signals.iter().flat_map(|s| s.cited.clone()).collect();
    let text = signals
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    json!({"related": true, "observations": text, "cited": cited})
}

/// Severity the report stage reads back from summary wording.
fn severity_of(summary: &Value) -> u8 {
    if summary.get("absent").and_then(Value::as_bool) == Some(true) {
        return 3;
    }
    if summary.get("related").and_then(Value::as_bool) != Some(true) {
        return 0;
    }
    let obs = summary
        .get("observations")
        .and_then(Value::as_str)
        .unwrap_or_default();
    if obs.contains("is exhausted") || obs.contains("does not exist") {
        3
    } else if obs.contains("problematic phase") || obs.contains("inconsistent") {
        2
    } else {
        1
    }
}

fn commands_for(kind: &str, name: &str, ns: Option<&str>) -> Vec<String> {
    let ns_flag = ns.map(|n| format!(" -n {n}")).unwrap_or_default();
    match kind {
        "ResourceQuota" => vec![
            format!("kubectl describe resourcequota {name}{ns_flag}"),
            format!("kubectl edit resourcequota {name}{ns_flag}"),
        ],
        "ConfigMap" => vec![format!(
            "kubectl create configmap {name}{ns_flag} --from-file=<path>"
        )],
        "Secret" => vec![format!(
            "kubectl create secret generic {name}{ns_flag} --from-literal=<key>=<value>"
        )],
        "ServiceAccount" => vec![format!("kubectl create serviceaccount {name}{ns_flag}")],
        "nfs" => vec!["kubectl get persistentvolumes -o wide".into()],
        other => vec![format!(
            "kubectl describe {} {name}{ns_flag}",
            other.to_lowercase()
        )],
    }
}

fn report(context: &Value) -> Value {
    let empty = Vec::new();
    let summaries = context
        .get("summaries")
        .and_then(Value::as_array)
        .unwrap_or(&empty);
    let mut best: Option<(u8, &Value)> = None;
    for s in summaries {
        let sev = severity_of(s);
        if sev > 0 && best.is_none_or(|(b, _)| sev >= b) {
            best = Some((sev, s));
        }
    }
    let discrepancy = summaries.iter().any(|s| {
        s.get("observations")
            .and_then(Value::as_str)
            .is_some_and(|o| o.contains("inconsistent"))
    });
    let all_absent = !summaries.is_empty()
        && summaries
            .iter()
            .all(|s| s.get("absent").and_then(Value::as_bool) == Some(true));
    let entity_text = |s: &Value, f: &str| {
        s.pointer(&format!("/entity/{f}"))
            .and_then(Value::as_str)
            .map(str::to_owned)
    };
    let findings: Vec<Value> = summaries
        .iter()
        .map(|s| {
            json!({
                "entity": entity_text(s, "display").unwrap_or_default(),
                "observation": s.get("observations").cloned().unwrap_or(Value::Null),
                "root_cause": best.is_some_and(|(_, b)| std::ptr::eq(b, s)),
            })
        })
        .collect();
    let Some((_, root)) = best else {
        return json!({
            "conclusion": "The retrieved states appear unrelated to the incident; no root cause could be identified.",
            "root_cause": null,
            "findings": findings,
            "commands": [],
            "discrepancy": discrepancy,
        });
    };
    let kind = entity_text(root, "kind").unwrap_or_default();
    let name = entity_text(root, "name")
        .or_else(|| entity_text(root, "uid"))
        .unwrap_or_default();
    let ns = entity_text(root, "namespace");
    let display = entity_text(root, "display").unwrap_or_default();
    let obs = root
        .get("observations")
        .and_then(Value::as_str)
        .unwrap_or_default();
    let mut conclusion = if all_absent {
        format!("None of the entities on the path has a recorded state. {display} is reported as the root cause because it is missing.")
    } else {
        format!("The root cause is {display}. {obs}")
    };
    if discrepancy {
        conclusion.push_str(
            " The recorded state disagrees with the error message, which points to a data discrepancy.",
        );
    }
    json!({
        "conclusion": conclusion,
        "root_cause": {"kind": kind, "name": name, "namespace": ns},
        "findings": findings,
        "commands": commands_for(&kind, &name, ns.as_deref()),
        "discrepancy": discrepancy,
    })
}

fn locate(context: &Value) -> Value {
    let strings = |field: &str| -> Vec<String> {
        context
            .get(field)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_owned).collect())
            .unwrap_or_default()
    };
    let message = context.get("message").and_then(Value::as_str).unwrap_or_default();
    let known = strings("known_kinds");
    let excluded = strings("excluded");
    let usable = |k: &str| known.iter().any(|x| x == k) && !excluded.iter().any(|x| x == k);
    let conventions: Vec<NamingConvention> = context
        .get("naming_conventions")
        .cloned()
        .and_then(|v| serde_json::from_value(v).ok())
        .unwrap_or_default();

    let mut candidates: Vec<(String, Vec<String>, String)> = Vec::new();
    for (re, kind, inter) in locator_rules() {
        if re.is_match(message) {
            candidates.push((
                (*kind).to_owned(),
                inter.iter().map(|s| (*s).to_owned()).collect(),
                format!("the message matches the pattern for {kind}"),
            ));
        }
    }
    for name in quoted_names(message) {
        for c in &conventions {
            if c.matches(&name) {
                candidates.push((
                    c.implies_kind.clone(),
                    Vec::new(),
                    format!(
                        "the name {name:?} follows the naming convention for {}",
                        c.implies_kind
                    ),
                ));
            }
        }
    }
    // A convention hit on a quoted name is more specific than a generic
    // mount-failure pattern.
    candidates.sort_by_key(|(_, _, why)| !why.starts_with("the name"));
    match candidates.into_iter().find(|(k, _, _)| usable(k)) {
        Some((dest, inter, why)) => json!({
            "srcKind": context.get("src_kind"),
            "interKinds": inter.into_iter().filter(|k| known.contains(k)).collect::<Vec<_>>(),
            "destKind": dest,
            "rationale": format!("Chosen because {why}."),
        }),
        None => json!({
            "srcKind": context.get("src_kind"),
            "interKinds": [],
            "destKind": "",
            "rationale": "No rule applies to this message.",
        }),
    }
}

fn estimate(context: &Value) -> Value {
    match context.pointer("/report/root_cause") {
        Some(rc) if !rc.is_null() => json!({
            "reasoning": "The report names a concrete root-cause entity backed by its recorded state.",
            "score": 9,
        }),
        _ => json!({
            "reasoning": "The report does not identify a root cause.",
            "score": 2,
        }),
    }
}

/// Rule-table backend for deterministic end-to-end runs.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleOracle;

impl RuleOracle {
    pub fn new() -> Self {
        Self
    }
}

impl LlmBackend for RuleOracle {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, BackendError> {
        let ctx = &req.context;
        let text = match req.stage {
            Stage::Locator => locate(ctx).to_string(),
            Stage::Cypher => ctx
                .get("reference")
                .and_then(Value::as_str)
                .ok_or_else(|| BackendError::Script("cypher request without a reference query".into()))?
                .to_owned(),
            Stage::Summarizer => summarize(ctx).to_string(),
            Stage::Report => report(ctx).to_string(),
            Stage::Estimator => estimate(ctx).to_string(),
        };
        Ok(Completion::estimated(&req.prompt, text))
    }

    fn name(&self) -> &str {
        "oracle"
    }
}
