use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tracing::{info, warn};

use super::backend::{BackendError, CompletionParams, CompletionRequest, LlmBackend, Stage, Usage};
use super::prompts::{PromptError, PromptSet};
use crate::driver::Incident;
use crate::entity::EntityRef;
use crate::metagraph::Metapath;
use crate::query::{cypher_matches_metapath, emit_cypher, Fragment, QueryError, StateEntry};
use crate::time::format_timestamp;

/// Re-asks after an unparseable answer before a stage gives up.
pub const JSON_REASKS: usize = 2;
pub const SUMMARY_WORD_LIMIT: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("{stage} backend call failed: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("{stage} stage failed: {detail}")]
    StageFailure { stage: Stage, detail: String },
    #[error("{stage} answer rejected: {detail}")]
    ValidationFailure { stage: Stage, detail: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamingConvention {
    /// Substring, or a regular expression when `regex` is set.
    pub pattern: String,
    #[serde(default)]
    pub regex: bool,
    pub implies_kind: String,
}

impl NamingConvention {
    pub fn matches(&self, name: &str) -> bool {
        if self.regex {
            regex::Regex::new(&self.pattern)
                .map(|re| re.is_match(name))
                .unwrap_or(false)
        } else {
            name.contains(&self.pattern)
        }
    }
}

/// Graph and operator knowledge injected into the locator prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnowledgeConfig {
    /// Filled from the MetaGraph when empty.
    pub known_kinds: Vec<String>,
    pub priority_external_kinds: Vec<String>,
    pub naming_conventions: Vec<NamingConvention>,
    pub guidance: Vec<String>,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self {
            known_kinds: Vec::new(),
            priority_external_kinds: vec!["nfs".into()],
            naming_conventions: vec![
                NamingConvention {
                    pattern: "-conf".into(),
                    regex: false,
                    implies_kind: "ConfigMap".into(),
                },
                NamingConvention {
                    pattern: "-secret".into(),
                    regex: false,
                    implies_kind: "Secret".into(),
                },
            ],
            guidance: Vec::new(),
        }
    }
}

impl KnowledgeConfig {
    /// Copy with `known_kinds` replaced by the given vocabulary.
    pub fn with_known_kinds(&self, kinds: Vec<String>) -> Self {
        Self {
            known_kinds: kinds,
            ..self.clone()
        }
    }

    /// Conventions whose implied kind is missing from `known_kinds`.
    pub fn unknown_convention_kinds(&self) -> Vec<String> {
        let known: BTreeSet<&str> = self.known_kinds.iter().map(String::as_str).collect();
        self.naming_conventions
            .iter()
            .filter(|c| !known.contains(c.implies_kind.as_str()))
            .map(|c| c.implies_kind.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocatorResult {
    pub src_kind: String,
    pub inter_kinds: Vec<String>,
    pub dest_kind: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CypherOutcome {
    pub text: String,
    /// False when the deterministic compiler's text was substituted.
    pub from_llm: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSummary {
    pub entity: EntityRef,
    pub label: String,
    /// `None` when the answer could not be parsed.
    pub related: Option<bool>,
    pub observations: String,
    /// JSON pointers into the entity's StateJSON.
    pub cited_fragments: Vec<String>,
    /// The entity had no recorded state.
    pub absent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    /// Entity label as written in the report.
    pub entity: String,
    /// The statepath entity the label resolved to.
    pub entity_ref: Option<EntityRef>,
    pub observation: String,
    pub root_cause: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaReport {
    pub conclusion: String,
    pub root_cause: Option<EntityRef>,
    pub findings: Vec<Finding>,
    /// Suggested commands; never executed.
    pub commands: Vec<String>,
    /// Commands dropped by the whitelist.
    pub rejected_commands: Vec<String>,
    pub discrepancy: bool,
    pub trial_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvestigationVerdict {
    pub score: u8,
    pub sufficient: bool,
    pub reasoning: String,
}

impl InvestigationVerdict {
    pub fn new(score: u8, threshold: u8, reasoning: impl Into<String>) -> Self {
        Self {
            score,
            sufficient: score >= threshold,
            reasoning: reasoning.into(),
        }
    }
}

/// Pull a JSON object out of a model answer: the whole text, a fenced code
/// block, or the span from the first `{` to the last `}`.
pub fn extract_json_object(text: &str) -> Option<Map<String, Value>> {
    let trimmed = text.trim();
    let mut candidates = vec![trimmed.to_owned()];
    if let Some(start) = trimmed.find("```") {
        let rest = &trimmed[start + 3..];
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        if let Some(end) = rest.find("```") {
            candidates.push(rest[..end].trim().to_owned());
        }
    }
    if let (Some(a), Some(b)) = (trimmed.find('{'), trimmed.rfind('}')) {
        if a < b {
            candidates.push(trimmed[a..=b].to_owned());
        }
    }
    candidates
        .into_iter()
        .find_map(|c| match serde_json::from_str::<Value>(&c) {
            Ok(Value::Object(m)) => Some(m),
            _ => None,
        })
}

/// Cap `text` at `limit` words, cutting back to the last sentence end inside
/// the cap when there is one.
pub fn truncate_words(text: &str, limit: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= limit {
        return words.join(" ");
    }
    let kept = &words[..limit];
    match kept
        .iter()
        .rposition(|w| w.ends_with('.') || w.ends_with('!') || w.ends_with('?'))
    {
        Some(i) => kept[..=i].join(" "),
        None => kept.join(" "),
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

const SHELL_META: [&str; 9] = [";", "&&", "||", "|", "`", "$(", ">", "<", "\n"];

/// A command is allowed when its first word is a whitelisted binary and it
/// carries no shell chaining, substitution or redirection.
pub fn command_allowed(cmd: &str, whitelist: &[String]) -> bool {
    let cmd = cmd.trim();
    let Some(bin) = cmd.split_whitespace().next() else {
        return false;
    };
    whitelist.iter().any(|w| w == bin) && !SHELL_META.iter().any(|m| cmd.contains(m))
}

/// Rebuild a partial StateJSON from fragments so cited pointers can be
/// resolved against it.
pub fn fragments_document(fragments: &[Fragment]) -> Value {
    if let Some(whole) = fragments.iter().find(|f| f.pointer.is_empty()) {
        return whole.value.clone();
    }
    let mut root = Map::new();
    for f in fragments {
        let segs: Vec<String> = f
            .pointer
            .trim_start_matches('/')
            .split('/')
            .map(|s| s.replace("~1", "/").replace("~0", "~"))
            .collect();
        let mut cur = &mut root;
        for (i, seg) in segs.iter().enumerate() {
            if i + 1 == segs.len() {
                cur.insert(seg.clone(), f.value.clone());
            } else {
                let next = cur
                    .entry(seg.clone())
                    .or_insert_with(|| Value::Object(Map::new()));
                if !next.is_object() {
                    *next = Value::Object(Map::new());
                }
                cur = next.as_object_mut().expect("object");
            }
        }
    }
    Value::Object(root)
}

/// Summary recorded directly for an entity without state; no model call.
pub fn absence_summary(entry: &StateEntry) -> DiagnosticSummary {
    DiagnosticSummary {
        entity: entry.entity.clone(),
        label: entry.label.clone(),
        related: Some(true),
        observations: format!(
            "No recorded state exists for {} at the incident time; the object is missing.",
            entry.entity
        ),
        cited_fragments: Vec::new(),
        absent: true,
    }
}

fn entity_json(e: &EntityRef) -> Value {
    json!({
        "display": e.to_string(),
        "kind": e.kind,
        "name": e.name,
        "namespace": e.namespace,
        "uid": e.uid_str(),
    })
}

fn bullet_list(items: &[String]) -> String {
    if items.is_empty() {
        "  (none)".into()
    } else {
        items
            .iter()
            .map(|i| format!("  - {i}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Per-incident conversation state: renders prompts, calls the backend,
/// validates answers and tallies token usage per stage.
pub struct LlmSession<'a> {
    backend: &'a dyn LlmBackend,
    prompts: &'a PromptSet,
    incident_id: String,
    params: CompletionParams,
    usage: BTreeMap<Stage, Usage>,
    calls: usize,
    notes: Vec<String>,
}

impl<'a> LlmSession<'a> {
    pub fn new(
        backend: &'a dyn LlmBackend,
        prompts: &'a PromptSet,
        incident_id: impl Into<String>,
        params: CompletionParams,
    ) -> Self {
        Self {
            backend,
            prompts,
            incident_id: incident_id.into(),
            params,
            usage: BTreeMap::new(),
            calls: 0,
            notes: Vec::new(),
        }
    }

    pub fn incident_id(&self) -> &str {
        &self.incident_id
    }

    /// Usage since the last [`take_usage`](Self::take_usage), per stage.
    pub fn usage(&self) -> &BTreeMap<Stage, Usage> {
        &self.usage
    }

    pub fn take_usage(&mut self) -> BTreeMap<Stage, Usage> {
        std::mem::take(&mut self.usage)
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn take_notes(&mut self) -> Vec<String> {
        std::mem::take(&mut self.notes)
    }

    fn note(&mut self, msg: String) {
        info!(incident = %self.incident_id, "{msg}");
        self.notes.push(msg);
    }

    fn call(&mut self, stage: Stage, prompt: String, context: &Value) -> Result<String, StageError> {
        let req = CompletionRequest {
            stage,
            incident_id: self.incident_id.clone(),
            prompt,
            params: self.params,
            context: context.clone(),
        };
        let out = self
            .backend
            .complete(&req)
            .map_err(|source| StageError::Backend { stage, source })?;
        self.calls += 1;
        self.usage.entry(stage).or_default().add(out.usage);
        Ok(out.text)
    }

    /// Ask, and re-ask up to [`JSON_REASKS`] times while `parse` rejects the
    /// answer.
    fn ask_json<T>(
        &mut self,
        stage: Stage,
        prompt: String,
        context: &Value,
        mut parse: impl FnMut(&Map<String, Value>) -> Result<T, String>,
    ) -> Result<T, StageError> {
        let mut current = prompt.clone();
        let mut last = String::new();
        for attempt in 0..=JSON_REASKS {
            let text = self.call(stage, current.clone(), context)?;
            let problem = match extract_json_object(&text) {
                Some(obj) => match parse(&obj) {
                    Ok(v) => return Ok(v),
                    Err(e) => e,
                },
                None => "the answer is not a JSON object".to_owned(),
            };
            warn!(%stage, attempt, %problem, "unusable answer");
            last = problem.clone();
            current = format!(
                "{prompt}\n\nYour previous answer could not be used ({problem}). Reply with the JSON object only."
            );
        }
        Err(StageError::StageFailure {
            stage,
            detail: format!("no usable answer after {JSON_REASKS} re-asks: {last}"),
        })
    }

    pub fn locate_root_cause(
        &mut self,
        incident: &Incident,
        src_kind: &str,
        knowledge: &KnowledgeConfig,
        excluded: &[String],
    ) -> Result<LocatorResult, StageError> {
        let conventions: Vec<String> = knowledge
            .naming_conventions
            .iter()
            .map(|c| {
                format!(
                    "names {} {:?} usually denote a {}",
                    if c.regex { "matching" } else { "containing" },
                    c.pattern,
                    c.implies_kind
                )
            })
            .collect();
        let mut slots = BTreeMap::new();
        slots.insert(
            "reason",
            incident.reason.clone().unwrap_or_else(|| "(unknown)".into()),
        );
        slots.insert("namespace", incident.namespace.clone());
        slots.insert("message", incident.message.clone());
        slots.insert("src_kind", src_kind.to_owned());
        slots.insert("known_kinds", bullet_list(&knowledge.known_kinds));
        slots.insert(
            "priority_external_kinds",
            bullet_list(&knowledge.priority_external_kinds),
        );
        slots.insert("naming_conventions", bullet_list(&conventions));
        slots.insert("guidance", bullet_list(&knowledge.guidance));
        slots.insert("excluded", bullet_list(excluded));
        let prompt = self.prompts.get(Stage::Locator).render(&slots)?;
        let context = json!({
            "message": incident.message,
            "namespace": incident.namespace,
            "reason": incident.reason,
            "src_kind": src_kind,
            "known_kinds": knowledge.known_kinds,
            "priority_external_kinds": knowledge.priority_external_kinds,
            "naming_conventions": knowledge.naming_conventions,
            "excluded": excluded,
        });
        let result = self.ask_json(Stage::Locator, prompt, &context, |obj| {
            let dest = obj
                .get("destKind")
                .and_then(Value::as_str)
                .ok_or("missing destKind")?;
            let inter = match obj.get("interKinds") {
                None | Some(Value::Null) => Vec::new(),
                Some(Value::Array(items)) => items
                    .iter()
                    .map(|v| v.as_str().map(str::to_owned).ok_or("interKinds must be strings"))
                    .collect::<Result<Vec<_>, _>>()?,
                Some(_) => return Err("interKinds must be a list".into()),
            };
            Ok(LocatorResult {
                src_kind: src_kind.to_owned(),
                inter_kinds: inter,
                dest_kind: dest.trim().to_owned(),
                rationale: obj
                    .get("rationale")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_owned(),
            })
        })?;
        let known: BTreeSet<&str> = knowledge.known_kinds.iter().map(String::as_str).collect();
        let reject = |detail: String| StageError::ValidationFailure {
            stage: Stage::Locator,
            detail,
        };
        if !known.contains(result.dest_kind.as_str()) {
            return Err(reject(format!(
                "destKind {:?} is not a known kind",
                result.dest_kind
            )));
        }
        if excluded.contains(&result.dest_kind) {
            return Err(reject(format!(
                "destKind {} was already examined in an earlier trial",
                result.dest_kind
            )));
        }
        if let Some(bad) = result.inter_kinds.iter().find(|k| !known.contains(k.as_str())) {
            return Err(reject(format!("interKind {bad:?} is not a known kind")));
        }
        Ok(result)
    }

    /// Model-written Cypher for an extended metapath, checked step by step
    /// against the deterministic compiler; its output is substituted on any
    /// mismatch or failure.
    pub fn generate_cypher_llm(
        &mut self,
        path: &Metapath,
        incident: &Incident,
        event: &EntityRef,
    ) -> Result<CypherOutcome, StageError> {
        let reference = emit_cypher(path, event)?;
        let mut slots = BTreeMap::new();
        slots.insert("event_uid", event.uid_str().unwrap_or_default().to_owned());
        slots.insert("message", incident.message.clone());
        slots.insert("metapath", path.to_listing());
        let prompt = self.prompts.get(Stage::Cypher).render(&slots)?;
        let context = json!({
            "metapath": path.to_listing(),
            "event_uid": event.uid_str(),
            "reference": reference,
        });
        let fallback = |note: String| CypherOutcome {
            text: reference.clone(),
            from_llm: false,
            note: Some(note),
        };
        let text = match self.call(Stage::Cypher, prompt, &context) {
            Ok(t) => t,
            Err(e) => {
                let out = fallback(format!("Cypher generation failed ({e}); compiled query used"));
                self.note(out.note.clone().unwrap_or_default());
                return Ok(out);
            }
        };
        let text = strip_code_fence(&text);
        if cypher_matches_metapath(&text, path) {
            return Ok(CypherOutcome {
                text,
                from_llm: true,
                note: None,
            });
        }
        let out = fallback("generated Cypher does not follow the metapath; compiled query used".into());
        self.note(out.note.clone().unwrap_or_default());
        Ok(out)
    }

    pub fn summarize_state(
        &mut self,
        entry: &StateEntry,
        message: &str,
    ) -> Result<DiagnosticSummary, StageError> {
        if entry.absent {
            return Ok(absence_summary(entry));
        }
        let fragments_text = entry
            .fragments
            .iter()
            .map(|f| {
                let ptr = if f.pointer.is_empty() {
                    "(whole document)"
                } else {
                    &f.pointer
                };
                format!(
                    "{ptr}:\n{}",
                    serde_json::to_string_pretty(&f.value).expect("json")
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let range = entry
            .range
            .map(|r| format!("{} .. {}", format_timestamp(&r.t_min), format_timestamp(&r.t_max)))
            .unwrap_or_default();
        let mut slots = BTreeMap::new();
        slots.insert("message", message.to_owned());
        slots.insert("entity", entry.entity.to_string());
        slots.insert("label", entry.label.clone());
        slots.insert("valid_range", range);
        slots.insert("fragments", fragments_text);
        slots.insert("word_limit", SUMMARY_WORD_LIMIT.to_string());
        let prompt = self.prompts.get(Stage::Summarizer).render(&slots)?;
        let context = json!({
            "message": message,
            "entity": entity_json(&entry.entity),
            "label": entry.label,
            "fragments": entry.fragments,
        });
        let text = self.call(Stage::Summarizer, prompt, &context)?;
        let doc = fragments_document(&entry.fragments);
        let parsed = extract_json_object(&text).and_then(|obj| {
            let related = obj.get("related").and_then(Value::as_bool)?;
            let observations = obj.get("observations").and_then(Value::as_str)?.to_owned();
            let cited: Vec<String> = obj
                .get("cited")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).map(str::to_owned).collect())
                .unwrap_or_default();
            Some((related, observations, cited))
        });
        let Some((related, observations, cited)) = parsed else {
            self.note(format!(
                "summary for {} could not be parsed; raw fragments kept",
                entry.entity
            ));
            let raw = entry
                .fragments
                .iter()
                .map(|f| {
                    format!(
                        "{} = {}",
                        if f.pointer.is_empty() { "/" } else { &f.pointer },
                        f.value
                    )
                })
                .collect::<Vec<_>>()
                .join("; ");
            return Ok(DiagnosticSummary {
                entity: entry.entity.clone(),
                label: entry.label.clone(),
                related: None,
                observations: truncate_words(&raw, SUMMARY_WORD_LIMIT),
                cited_fragments: Vec::new(),
                absent: false,
            });
        };
        let (valid, dropped): (Vec<String>, Vec<String>) = cited
            .into_iter()
            .partition(|p| doc.pointer(p).is_some() && !p.is_empty());
        if !dropped.is_empty() {
            self.note(format!(
                "summary for {} cited missing fields {:?}; dropped",
                entry.entity, dropped
            ));
        }
        Ok(DiagnosticSummary {
            entity: entry.entity.clone(),
            label: entry.label.clone(),
            related: Some(related),
            observations: truncate_words(&observations, SUMMARY_WORD_LIMIT),
            cited_fragments: valid,
            absent: false,
        })
    }

    pub fn generate_report(
        &mut self,
        summaries: &[DiagnosticSummary],
        incident: &Incident,
        dest_kind: &str,
        trial_index: usize,
        whitelist: &[String],
    ) -> Result<RcaReport, StageError> {
        if summaries.is_empty() {
            return Err(StageError::StageFailure {
                stage: Stage::Report,
                detail: "no summaries or absences to report on".into(),
            });
        }
        let present: Vec<String> = summaries
            .iter()
            .filter(|s| !s.absent)
            .map(|s| {
                let rel = match s.related {
                    Some(true) => "related",
                    Some(false) => "unrelated",
                    None => "relation unknown",
                };
                format!("{} [{}] ({rel}): {}", s.entity, s.label, s.observations)
            })
            .collect();
        let absent: Vec<String> = summaries
            .iter()
            .filter(|s| s.absent)
            .map(|s| s.entity.to_string())
            .collect();
        let mut slots = BTreeMap::new();
        slots.insert("namespace", incident.namespace.clone());
        slots.insert("message", incident.message.clone());
        slots.insert("summaries", bullet_list(&present));
        slots.insert("absences", bullet_list(&absent));
        slots.insert("allowed_binaries", whitelist.join(", "));
        let prompt = self.prompts.get(Stage::Report).render(&slots)?;
        let context = json!({
            "message": incident.message,
            "namespace": incident.namespace,
            "dest_kind": dest_kind,
            "allowed_binaries": whitelist,
            "summaries": summaries.iter().map(|s| json!({
                "entity": entity_json(&s.entity),
                "label": s.label,
                "related": s.related,
                "observations": s.observations,
                "cited": s.cited_fragments,
                "absent": s.absent,
            })).collect::<Vec<_>>(),
        });
        let entities: Vec<&EntityRef> = summaries.iter().map(|s| &s.entity).collect();
        let report = self.ask_json(Stage::Report, prompt, &context, |obj| {
            let conclusion = obj
                .get("conclusion")
                .and_then(Value::as_str)
                .filter(|c| !c.trim().is_empty())
                .ok_or("missing conclusion")?
                .to_owned();
            let root_cause = obj
                .get("root_cause")
                .and_then(Value::as_object)
                .and_then(|rc| resolve_entity(rc, &entities));
            let findings = obj
                .get("findings")
                .and_then(Value::as_array)
                .map(|items| {
                    items
                        .iter()
                        .filter_map(Value::as_object)
                        .map(|f| {
                            let label = f
                                .get("entity")
                                .and_then(Value::as_str)
                                .unwrap_or_default()
                                .to_owned();
                            Finding {
                                entity_ref: entities
                                    .iter()
                                    .find(|e| e.to_string() == label)
                                    .map(|e| (*e).clone()),
                                entity: label,
                                observation: f
                                    .get("observation")
                                    .and_then(Value::as_str)
                                    .unwrap_or_default()
                                    .to_owned(),
                                root_cause: f.get("root_cause").and_then(Value::as_bool).unwrap_or(false),
                            }
                        })
                        .collect()
                })
                .unwrap_or_default();
            let commands: Vec<String> = obj
                .get("commands")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).map(str::to_owned).collect())
                .unwrap_or_default();
            let (commands, rejected_commands): (Vec<String>, Vec<String>) = commands
                .into_iter()
                .map(|c| c.trim().to_owned())
                .partition(|c| command_allowed(c, whitelist));
            Ok(RcaReport {
                conclusion,
                root_cause,
                findings,
                commands,
                rejected_commands,
                discrepancy: obj.get("discrepancy").and_then(Value::as_bool).unwrap_or(false),
                trial_index,
            })
        })?;
        if !report.rejected_commands.is_empty() {
            self.note(format!(
                "dropped {} command(s) outside the whitelist",
                report.rejected_commands.len()
            ));
        }
        Ok(report)
    }

    pub fn estimate_investigation(
        &mut self,
        report: &RcaReport,
        incident: &Incident,
        threshold: u8,
    ) -> Result<InvestigationVerdict, StageError> {
        let findings: Vec<String> = report
            .findings
            .iter()
            .map(|f| {
                format!(
                    "{}{}: {}",
                    f.entity,
                    if f.root_cause { " (root cause)" } else { "" },
                    f.observation
                )
            })
            .collect();
        let mut slots = BTreeMap::new();
        slots.insert("message", incident.message.clone());
        slots.insert("conclusion", report.conclusion.clone());
        slots.insert("findings", bullet_list(&findings));
        slots.insert("commands", bullet_list(&report.commands));
        let prompt = self.prompts.get(Stage::Estimator).render(&slots)?;
        let context = json!({
            "message": incident.message,
            "report": report,
        });
        let text = self.call(Stage::Estimator, prompt, &context)?;
        let obj = extract_json_object(&text);
        let score = obj.as_ref().and_then(|o| o.get("score")).and_then(|v| match v {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => s.trim().parse::<f64>().ok(),
            _ => None,
        });
        let reasoning = obj
            .as_ref()
            .and_then(|o| o.get("reasoning"))
            .and_then(Value::as_str)
            .map(str::to_owned)
            .unwrap_or_else(|| text.trim().to_owned());
        let score = match score {
            Some(s) if s.is_finite() => s.round().clamp(0.0, 10.0) as u8,
            _ => {
                self.note("estimator returned no numeric score; treated as 0".into());
                0
            }
        };
        Ok(InvestigationVerdict::new(score, threshold, reasoning))
    }
}

fn strip_code_fence(text: &str) -> String {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
        if let Some(end) = rest.rfind("```") {
            return rest[..end].trim().to_owned() + "\n";
        }
    }
    t.to_owned() + "\n"
}

/// Map a `{"kind", "name", "namespace"}` object onto one of the statepath
/// entities.
fn resolve_entity(obj: &Map<String, Value>, entities: &[&EntityRef]) -> Option<EntityRef> {
    let field = |k: &str| obj.get(k).and_then(Value::as_str).filter(|s| !s.is_empty());
    let kind = field("kind")?;
    let name = field("name");
    let ns = field("namespace");
    entities
        .iter()
        .filter(|e| e.kind == kind)
        .find(|e| {
            name.is_none_or(|n| e.name.as_deref() == Some(n) || e.uid_str() == Some(n))
                && ns.is_none_or(|n| e.namespace.is_none() || e.namespace.as_deref() == Some(n))
        })
        .map(|e| (*e).clone())
}
