//! Per-incident RCA loop, graph preparation and the evaluation harness.

mod eval;
mod review;

pub use eval::{
    evaluate, load_corpus, precision_summary, read_corpus, run_eval, CorpusRow, CostRow, EvalMode,
    EvalReport, GroundTruth, IncidentOutcome, TypeRow,
};
pub use review::{EstimatorReviewer, Reviewer, StdinReviewer};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::config::Config;
use crate::entity::{profile_keys, select_entity_keys, EntityError, EntityKeyCatalog};
use crate::ingest::{dedup_stream, DedupedSnapshot, IngestError, RawSnapshot};
use crate::llm::{
    CompletionParams, CypherOutcome, DiagnosticSummary, InvestigationVerdict, KnowledgeConfig, LlmBackend,
    LlmSession, LocatorResult, MeteredBackend, PromptSet, RcaReport, Stage, StageError, Usage,
};
use crate::metagraph::{
    extend_metapath, find_metapaths, MetaGraph, MetaGraphError, Metapath, MetapathLimits,
};
use crate::query::{compile_plan, execute_plan, fetch_states, Statepath, DEFAULT_QUERY_WINDOW_SECS};
use crate::stategraph::{build_state_graph, match_incident_event, MatchConfig, StateGraph, StateGraphError};
use crate::time::{format_timestamp, Timestamp};

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error(transparent)]
    StateGraph(#[from] StateGraphError),
    #[error(transparent)]
    MetaGraph(#[from] MetaGraphError),
    #[error("invalid incident: {0}")]
    Incident(String),
    #[error("{path}: {detail}")]
    Input { path: String, detail: String },
}

/// An incident reported against the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    /// Accounting key; derived from namespace and time when not given.
    #[serde(default)]
    pub id: String,
    pub message: String,
    pub namespace: String,
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_label: Option<String>,
}

impl Incident {
    pub fn new(message: impl Into<String>, namespace: impl Into<String>, timestamp: Timestamp) -> Self {
        let namespace = namespace.into();
        Self {
            id: format!("{namespace}@{}", format_timestamp(&timestamp)),
            message: message.into(),
            namespace,
            timestamp,
            reason: None,
            type_label: None,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_reason(mut self, reason: impl Into<String>) -> Self {
        self.reason = Some(reason.into());
        self
    }

    pub fn with_type_label(mut self, label: impl Into<String>) -> Self {
        self.type_label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        if self.message.trim().is_empty() {
            return Err(DriverError::Incident("message is empty".into()));
        }
        if self.namespace.trim().is_empty() {
            return Err(DriverError::Incident("namespace is empty".into()));
        }
        Ok(())
    }

    fn ensure_id(&mut self) {
        if self.id.is_empty() {
            self.id = format!("{}@{}", self.namespace, format_timestamp(&self.timestamp));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcaConfig {
    pub max_trials: usize,
    /// Minimum estimator score for a sufficient explanation.
    pub threshold: u8,
    #[serde(rename = "match")]
    pub match_config: MatchConfig,
    /// Edge validity window around the incident time during execution.
    pub query_window_secs: i64,
    pub limits: MetapathLimits,
    /// Statepaths summarized per metapath.
    pub max_statepaths: usize,
    /// Binaries a recommended command may start with.
    pub command_whitelist: Vec<String>,
    pub completion: CompletionParams,
}

impl Default for RcaConfig {
    fn default() -> Self {
        Self {
            max_trials: 3,
            threshold: 7,
            match_config: MatchConfig::default(),
            query_window_secs: DEFAULT_QUERY_WINDOW_SECS,
            limits: MetapathLimits::default(),
            max_statepaths: 5,
            command_whitelist: vec!["kubectl".into()],
            completion: CompletionParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RcaStatus {
    Explained,
    Exhausted,
    Failed,
}

impl std::fmt::Display for RcaStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RcaStatus::Explained => "explained",
            RcaStatus::Exhausted => "exhausted",
            RcaStatus::Failed => "failed",
        })
    }
}

/// Everything one trial did and cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub trial_index: usize,
    pub locator: Option<LocatorResult>,
    /// Listings of the metapaths tried, in rank order.
    pub metapaths_tried: Vec<String>,
    /// The extended metapath whose statepaths were summarized.
    pub metapath: Option<Metapath>,
    pub statepaths: Vec<Statepath>,
    pub cypher: Option<CypherOutcome>,
    pub summaries: Vec<DiagnosticSummary>,
    pub report: Option<RcaReport>,
    pub verdict: Option<InvestigationVerdict>,
    pub error: Option<String>,
    pub notes: Vec<String>,
    pub stage_usage: BTreeMap<Stage, Usage>,
    /// Sum of `stage_usage`.
    pub usage: Usage,
    /// Usage as reported by the backend itself for this trial.
    pub backend_usage: Usage,
    pub wall_secs: f64,
}

impl AttemptRecord {
    fn new(trial_index: usize) -> Self {
        Self {
            trial_index,
            locator: None,
            metapaths_tried: Vec::new(),
            metapath: None,
            statepaths: Vec::new(),
            cypher: None,
            summaries: Vec::new(),
            report: None,
            verdict: None,
            error: None,
            notes: Vec::new(),
            stage_usage: BTreeMap::new(),
            usage: Usage::default(),
            backend_usage: Usage::default(),
            wall_secs: 0.0,
        }
    }

    /// Per-stage usage adds up to the recorded totals.
    pub fn accounting_consistent(&self) -> bool {
        let mut sum = Usage::default();
        for u in self.stage_usage.values() {
            sum.add(*u);
        }
        sum == self.usage && self.usage == self.backend_usage && self.wall_secs >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaResult {
    pub incident: Incident,
    pub status: RcaStatus,
    pub final_report: Option<RcaReport>,
    pub verdict: Option<InvestigationVerdict>,
    pub attempts: Vec<AttemptRecord>,
    /// Statepaths behind the final report.
    pub final_statepaths: Vec<Statepath>,
    /// Why the incident could not be processed, for `Failed`.
    pub diagnostics: Vec<String>,
}

impl RcaResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn total_usage(&self) -> Usage {
        let mut u = Usage::default();
        for a in &self.attempts {
            u.add(a.usage);
        }
        u
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let inc = &self.incident;
        let _ = writeln!(out, "# RCA report: {}\n", inc.id);
        let _ = writeln!(out, "- Namespace: `{}`", inc.namespace);
        let _ = writeln!(out, "- Time: {}", format_timestamp(&inc.timestamp));
        let _ = writeln!(out, "- Message: `{}`", inc.message);
        let _ = writeln!(
            out,
            "- Status: **{}** after {} attempt(s)",
            self.status,
            self.attempts.len()
        );
        if let Some(v) = &self.verdict {
            let _ = writeln!(
                out,
                "- Estimator score: {}/10 ({})",
                v.score,
                if v.sufficient {
                    "sufficient"
                } else {
                    "insufficient"
                }
            );
        }
        out.push('\n');
        if !self.diagnostics.is_empty() {
            out.push_str("## Diagnostics\n\n");
            for d in &self.diagnostics {
                let _ = writeln!(out, "- {d}");
            }
            out.push('\n');
        }
        if let Some(r) = &self.final_report {
            out.push_str("## Conclusion\n\n");
            let _ = writeln!(out, "{}\n", r.conclusion);
            if let Some(rc) = &r.root_cause {
                let _ = writeln!(out, "Root cause: `{rc}`\n");
            }
            if r.discrepancy {
                out.push_str("The recorded state disagrees with the error message.\n\n");
            }
            if !r.findings.is_empty() {
                out.push_str("## Findings\n\n");
                for f in &r.findings {
                    let mark = if f.root_cause { " (root cause)" } else { "" };
                    let _ = writeln!(out, "- `{}`{mark}: {}", f.entity, f.observation);
                }
                out.push('\n');
            }
            if !r.commands.is_empty() {
                out.push_str("## Suggested commands (not executed)\n\n```sh\n");
                for c in &r.commands {
                    let _ = writeln!(out, "{c}");
                }
                out.push_str("```\n\n");
            }
        }
        if !self.final_statepaths.is_empty() {
            out.push_str("## Statepaths\n\n");
            for p in &self.final_statepaths {
                let _ = writeln!(out, "- {}", p.display());
            }
            out.push('\n');
        }
        out.push_str("## Attempts\n\n| Trial | destKind | Score | Prompt tokens | Completion tokens | Seconds |\n|---|---|---|---|---|---|\n");
        for a in &self.attempts {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {:.3} |",
                a.trial_index,
                a.locator.as_ref().map_or("-", |l| l.dest_kind.as_str()),
                a.verdict.as_ref().map_or("-".to_owned(), |v| v.score.to_string()),
                a.usage.prompt_tokens,
                a.usage.completion_tokens,
                a.wall_secs
            );
        }
        out
    }
}

/// Graphs and catalog prepared from a snapshot corpus.
#[derive(Debug, Clone)]
pub struct PreparedGraphs {
    pub deduped: Vec<DedupedSnapshot>,
    pub catalog: EntityKeyCatalog,
    pub graph: StateGraph,
    pub meta: MetaGraph,
    /// Records dropped for lack of a usable identity.
    pub skipped: usize,
}

/// Dedup, select entity keys, build the StateGraph and its MetaGraph.
pub fn prepare_graphs(records: &[RawSnapshot], config: &Config) -> Result<PreparedGraphs, DriverError> {
    let rules = config.catalog.identity_rules();
    let outcome = dedup_stream(records, &rules, &config.volatile_fields)?;
    for (idx, reason) in &outcome.skipped {
        warn!(record = idx, %reason, "snapshot skipped");
    }
    let stats = profile_keys(&outcome.snapshots);
    let catalog = select_entity_keys(&stats, &config.catalog)?;
    let graph = build_state_graph(&outcome.snapshots, &catalog)?;
    let external: Vec<String> = rules.external_kinds().map(str::to_owned).collect();
    let meta = MetaGraph::from_state_graph(&graph, external)?;
    info!(
        vertices = graph.vertex_count(),
        edges = graph.edge_count(),
        meta_edges = meta.edge_count(),
        "graphs built"
    );
    Ok(PreparedGraphs {
        skipped: outcome.skipped.len(),
        deduped: outcome.snapshots,
        catalog,
        graph,
        meta,
    })
}

/// Inputs shared by every incident of a run.
pub struct RcaContext<'a> {
    pub graph: &'a StateGraph,
    pub meta: &'a MetaGraph,
    pub knowledge: &'a KnowledgeConfig,
    pub prompts: &'a PromptSet,
    pub config: &'a RcaConfig,
}

impl<'a> RcaContext<'a> {
    /// Knowledge with `known_kinds` filled from the MetaGraph when empty.
    fn effective_knowledge(&self) -> KnowledgeConfig {
        if self.knowledge.known_kinds.is_empty() {
            self.knowledge.with_known_kinds(self.meta.entity_kinds())
        } else {
            self.knowledge.clone()
        }
    }
}

/// Run the locate / retrieve / summarize / report / estimate loop for one
/// incident, using the estimator stage to judge each report.
pub fn run_rca(incident: &Incident, ctx: &RcaContext<'_>, backend: Arc<dyn LlmBackend>) -> RcaResult {
    run_rca_with(incident, ctx, backend, &mut EstimatorReviewer)
}

/// [`run_rca`] with a custom judge for reports.
pub fn run_rca_with(
    incident: &Incident,
    ctx: &RcaContext<'_>,
    backend: Arc<dyn LlmBackend>,
    reviewer: &mut dyn Reviewer,
) -> RcaResult {
    let mut incident = incident.clone();
    incident.ensure_id();
    let failed = |incident: Incident, diagnostics: Vec<String>| RcaResult {
        incident,
        status: RcaStatus::Failed,
        final_report: None,
        verdict: None,
        attempts: Vec::new(),
        final_statepaths: Vec::new(),
        diagnostics,
    };
    if let Err(e) = incident.validate() {
        return failed(incident, vec![e.to_string()]);
    }
    let event = match match_incident_event(ctx.graph, &incident, &ctx.config.match_config) {
        Ok(m) => m,
        Err(StateGraphError::IncidentNotFound { diagnostics, .. }) => return failed(incident, diagnostics),
        Err(e) => return failed(incident, vec![e.to_string()]),
    };
    if event.normalized {
        info!(incident = %incident.id, "incident matched after message normalization");
    }
    let src_kind = event.src_kind.clone();
    let knowledge = ctx.effective_knowledge();
    let unknown = knowledge.unknown_convention_kinds();
    if !unknown.is_empty() {
        warn!(?unknown, "naming conventions imply kinds absent from the graph");
    }

    let metered = MeteredBackend::new(backend);
    let mut session = LlmSession::new(&metered, ctx.prompts, incident.id.clone(), ctx.config.completion);
    let mut excluded: Vec<String> = Vec::new();
    let mut attempts: Vec<AttemptRecord> = Vec::new();

    for trial in 1..=ctx.config.max_trials.max(1) {
        let started = Instant::now();
        let before = metered.usage_for(&incident.id);
        let mut attempt = AttemptRecord::new(trial);
        let outcome = run_trial(
            &mut attempt,
            &incident,
            &event,
            &src_kind,
            &knowledge,
            &mut excluded,
            ctx,
            &mut session,
            reviewer,
        );
        if let Err(e) = outcome {
            warn!(incident = %incident.id, trial, error = %e, "trial aborted");
            attempt.error = Some(e.to_string());
        }
        attempt.notes.extend(session.take_notes());
        attempt.stage_usage = session.take_usage();
        for u in attempt.stage_usage.values() {
            attempt.usage.add(*u);
        }
        attempt.backend_usage = metered.usage_for(&incident.id) - before;
        attempt.wall_secs = started.elapsed().as_secs_f64();
        let sufficient = attempt.verdict.as_ref().is_some_and(|v| v.sufficient);
        attempts.push(attempt);
        if sufficient {
            break;
        }
    }

    let explained = attempts
        .last()
        .and_then(|a| a.verdict.as_ref())
        .is_some_and(|v| v.sufficient);
    // On exhaustion keep the best-scoring report; the earliest wins ties.
    let best = if explained {
        attempts.last()
    } else {
        attempts
            .iter()
            .filter(|a| a.report.is_some())
            .fold(None::<&AttemptRecord>, |best, a| {
                let score = |x: &AttemptRecord| x.verdict.as_ref().map_or(0, |v| v.score);
                match best {
                    Some(b) if score(b) >= score(a) => Some(b),
                    _ => Some(a),
                }
            })
    };
    let (final_report, verdict, final_statepaths) = match best {
        Some(a) => (a.report.clone(), a.verdict.clone(), a.statepaths.clone()),
        None => (None, None, Vec::new()),
    };
    let diagnostics = if final_report.is_none() {
        attempts
            .iter()
            .filter_map(|a| a.error.as_ref().map(|e| format!("trial {}: {e}", a.trial_index)))
            .collect()
    } else {
        Vec::new()
    };
    RcaResult {
        incident,
        status: if explained {
            RcaStatus::Explained
        } else {
            RcaStatus::Exhausted
        },
        final_report,
        verdict,
        attempts,
        final_statepaths,
        diagnostics,
    }
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    attempt: &mut AttemptRecord,
    incident: &Incident,
    event: &crate::stategraph::EventMatch,
    src_kind: &str,
    knowledge: &KnowledgeConfig,
    excluded: &mut Vec<String>,
    ctx: &RcaContext<'_>,
    session: &mut LlmSession<'_>,
    reviewer: &mut dyn Reviewer,
) -> Result<(), TrialError> {
    let cfg = ctx.config;
    let located = session.locate_root_cause(incident, src_kind, knowledge, excluded)?;
    attempt.locator = Some(located.clone());
    if !excluded.contains(&located.dest_kind) {
        excluded.push(located.dest_kind.clone());
    }
    let ranked = find_metapaths(
        ctx.meta,
        src_kind,
        &located.dest_kind,
        &located.inter_kinds,
        &cfg.limits,
    )?;

    for candidate in ranked {
        attempt.metapaths_tried.push(candidate.path.to_listing());
        let extended = extend_metapath(&candidate.path, src_kind);
        let plan = compile_plan(
            &extended,
            &event.event,
            &event.event_vertex,
            incident.timestamp,
            cfg.query_window_secs,
        )
        .map_err(StageError::from)?;
        let mut statepaths = execute_plan(&plan, ctx.graph);
        if statepaths.is_empty() {
            continue;
        }
        statepaths.truncate(cfg.max_statepaths.max(1));
        attempt.cypher = Some(session.generate_cypher_llm(&extended, incident, &event.event)?);
        attempt.metapath = Some(extended);

        let mut seen = BTreeSet::new();
        let mut summaries = Vec::new();
        for sp in &statepaths {
            for entry in fetch_states(sp, ctx.graph, incident.timestamp).entries {
                if seen.insert(entry.entity.clone()) {
                    summaries.push(session.summarize_state(&entry, &incident.message)?);
                }
            }
        }
        attempt.statepaths = statepaths;
        attempt.summaries = summaries;
        let report = session.generate_report(
            &attempt.summaries,
            incident,
            &located.dest_kind,
            attempt.trial_index,
            &cfg.command_whitelist,
        )?;
        attempt.report = Some(report.clone());
        attempt.verdict = Some(reviewer.review(session, &report, incident, cfg.threshold)?);
        return Ok(());
    }
    Err(TrialError::NoStatepaths(located.dest_kind))
}

#[derive(Debug, thiserror::Error)]
enum TrialError {
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    MetaGraph(#[from] MetaGraphError),
    #[error("no metapath to {0} has an instance around the incident time")]
    NoStatepaths(String),
}
