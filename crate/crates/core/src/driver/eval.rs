use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{run_rca, DriverError, Incident, RcaContext, RcaResult, RcaStatus};
use crate::entity::{EntityRef, Identity};
use crate::ingest::SkippedLine;
use crate::llm::LlmBackend;
use crate::time::Timestamp;

/// The entity a labeled incident should be traced to. Unset fields are not
/// compared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite: Option<BTreeMap<String, String>>,
}

impl GroundTruth {
    pub fn matches(&self, e: &EntityRef) -> bool {
        if e.kind != self.kind {
            return false;
        }
        if let Some(uid) = &self.uid {
            if e.uid_str() != Some(uid.as_str()) {
                return false;
            }
        }
        if let Some(fields) = &self.composite {
            if e.identity != Identity::Composite(fields.clone()) {
                return false;
            }
        }
        if let Some(name) = &self.name {
            if e.name.as_deref() != Some(name.as_str()) {
                return false;
            }
        }
        if let (Some(ns), Some(ens)) = (&self.namespace, &e.namespace) {
            if ns != ens {
                return false;
            }
        }
        self.uid.is_some() || self.composite.is_some() || self.name.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRow {
    #[serde(default)]
    pub id: Option<String>,
    pub message: String,
    pub namespace: String,
    pub timestamp: Timestamp,
    #[serde(default)]
    pub reason: Option<String>,
    #[serde(default)]
    pub type_label: Option<String>,
    pub ground_truth: GroundTruth,
}

impl CorpusRow {
    pub fn incident(&self, index: usize) -> Incident {
        let mut inc = Incident::new(self.message.clone(), self.namespace.clone(), self.timestamp);
        inc.id = self.id.clone().unwrap_or_else(|| format!("row-{index}"));
        inc.reason = self.reason.clone();
        inc.type_label = self.type_label.clone();
        inc
    }

    fn type_label(&self) -> &str {
        self.type_label.as_deref().unwrap_or("Untyped")
    }
}

/// Read a JSON-lines corpus; malformed rows are skipped with a warning.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<(Vec<CorpusRow>, Vec<SkippedLine>), std::io::Error> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CorpusRow>(&line) {
            Ok(r) if !r.message.trim().is_empty() => rows.push(r),
            Ok(_) => skipped.push(SkippedLine {
                line: i + 1,
                reason: "empty message".into(),
            }),
            Err(e) => {
                warn!(line = i + 1, error = %e, "corpus row skipped");
                skipped.push(SkippedLine {
                    line: i + 1,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok((rows, skipped))
}

pub fn load_corpus(path: &Path) -> Result<(Vec<CorpusRow>, Vec<SkippedLine>), DriverError> {
    let file = std::fs::File::open(path).map_err(|e| DriverError::Input {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    read_corpus(std::io::BufReader::new(file)).map_err(|e| DriverError::Input {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// How an outcome is judged correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// The ground-truth entity lies on a statepath behind the final report.
    Retrieval,
    /// The final report names the ground-truth entity as the root cause.
    Report,
}

impl EvalMode {
    pub fn judge(&self, truth: &GroundTruth, result: &RcaResult) -> bool {
        match self {
            EvalMode::Retrieval => result
                .final_statepaths
                .iter()
                .flat_map(|p| &p.entities)
                .any(|e| truth.matches(e)),
            EvalMode::Report => result.final_report.as_ref().is_some_and(|r| {
                r.root_cause.as_ref().is_some_and(|e| truth.matches(e))
                    || r.findings
                        .iter()
                        .filter(|f| f.root_cause)
                        .filter_map(|f| f.entity_ref.as_ref())
                        .any(|e| truth.matches(e))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRow {
    pub type_label: String,
    pub correct: usize,
    pub total: usize,
    pub precision: f64,
}

/// Average cost of one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub type_label: String,
    pub time_secs: f64,
    pub prompt_tokens: f64,
    pub completion_tokens: f64,
    pub total_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentOutcome {
    pub id: String,
    pub type_label: String,
    pub status: RcaStatus,
    pub attempts: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub rows: Vec<TypeRow>,
    pub correct: usize,
    pub total: usize,
    /// Total correct over total examples.
    pub weighted_mean: f64,
    /// Mean of the per-type precisions.
    pub arithmetic_mean: f64,
    pub cost: Vec<CostRow>,
    /// Mean of the per-type cost rows.
    pub cost_average: Option<CostRow>,
    pub outcomes: Vec<IncidentOutcome>,
    pub skipped_rows: usize,
}

/// Per-type rows plus the weighted and arithmetic means from
/// `(type, correct, total)` counts.
pub fn precision_summary(counts: &[(String, usize, usize)]) -> (Vec<TypeRow>, f64, f64) {
    let rows: Vec<TypeRow> = counts
        .iter()
        .filter(|(_, _, t)| *t > 0)
        .map(|(label, c, t)| TypeRow {
            type_label: label.clone(),
            correct: *c,
            total: *t,
            precision: *c as f64 / *t as f64,
        })
        .collect();
    let correct: usize = rows.iter().map(|r| r.correct).sum();
    let total: usize = rows.iter().map(|r| r.total).sum();
    let weighted = if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    };
    let arithmetic = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.precision).sum::<f64>() / rows.len() as f64
    };
    (rows, weighted, arithmetic)
}

/// Score finished runs against their ground truth.
pub fn evaluate(outcomes: &[(CorpusRow, RcaResult)], mode: EvalMode) -> EvalReport {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut costs: BTreeMap<String, Vec<[f64; 4]>> = BTreeMap::new();
    let mut per_incident = Vec::new();
    for (row, result) in outcomes {
        let label = row.type_label().to_owned();
        let ok = mode.judge(&row.ground_truth, result);
        let slot = counts.entry(label.clone()).or_default();
        slot.1 += 1;
        if ok {
            slot.0 += 1;
        }
        let c = costs.entry(label.clone()).or_default();
        for a in &result.attempts {
            c.push([
                a.wall_secs,
                a.usage.prompt_tokens as f64,
                a.usage.completion_tokens as f64,
                a.usage.total() as f64,
            ]);
        }
        per_incident.push(IncidentOutcome {
            id: result.incident.id.clone(),
            type_label: label,
            status: result.status,
            attempts: result.attempts.len(),
            correct: ok,
        });
    }
    let triples: Vec<(String, usize, usize)> = counts.into_iter().map(|(k, (c, t))| (k, c, t)).collect();
    let (rows, weighted_mean, arithmetic_mean) = precision_summary(&triples);
    let cost: Vec<CostRow> = costs
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(label, v)| {
            let n = v.len() as f64;
            let mean = |i: usize| v.iter().map(|x| x[i]).sum::<f64>() / n;
            CostRow {
                type_label: label,
                time_secs: mean(0),
                prompt_tokens: mean(1),
                completion_tokens: mean(2),
                total_tokens: mean(3),
            }
        })
        .collect();
    let cost_average = (!cost.is_empty()).then(|| {
        let n = cost.len() as f64;
        CostRow {
            type_label: "Average".into(),
            time_secs: cost.iter().map(|r| r.time_secs).sum::<f64>() / n,
            prompt_tokens: cost.iter().map(|r| r.prompt_tokens).sum::<f64>() / n,
            completion_tokens: cost.iter().map(|r| r.completion_tokens).sum::<f64>() / n,
            total_tokens: cost.iter().map(|r| r.total_tokens).sum::<f64>() / n,
        }
    });
    EvalReport {
        mode,
        correct: rows.iter().map(|r| r.correct).sum(),
        total: rows.iter().map(|r| r.total).sum(),
        rows,
        weighted_mean,
        arithmetic_mean,
        cost,
        cost_average,
        outcomes: per_incident,
        skipped_rows: 0,
    }
}

/// Run every corpus row through [`run_rca`] and score the results.
pub fn run_eval(
    rows: &[CorpusRow],
    ctx: &RcaContext<'_>,
    backend: Arc<dyn LlmBackend>,
    mode: EvalMode,
) -> EvalReport {
    let outcomes: Vec<(CorpusRow, RcaResult)> = rows
        .iter()
        .enumerate()
        .map(|(i, row)| (row.clone(), run_rca(&row.incident(i), ctx, backend.clone())))
        .collect();
    evaluate(&outcomes, mode)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Precision and cost tables as Markdown.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            EvalMode::Retrieval => "retrieval",
            EvalMode::Report => "report",
        };
        let _ = writeln!(out, "## Precision ({mode} mode)\n");
        out.push_str("| Type | #Correct | #Example | Precision |\n|---|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.2} |",
                r.type_label, r.correct, r.total, r.precision
            );
        }
        let _ = writeln!(out, "| Total | {} | {} | |", self.correct, self.total);
        let _ = writeln!(out, "| Weighted mean | | | {:.4} |", self.weighted_mean);
        let _ = writeln!(out, "| Arithmetic mean | | | {:.4} |", self.arithmetic_mean);
        out.push_str("\n## Average cost per attempt\n\n| Type | TimeCost (sec) | PromptToken | CompletionToken | TotalToken |\n|---|---:|---:|---:|---:|\n");
        for r in self.cost.iter().chain(self.cost_average.iter()) {
            let _ = writeln!(
                out,
                "| {} | {:.3} | {:.1} | {:.1} | {:.1} |",
                r.type_label, r.time_secs, r.prompt_tokens, r.completion_tokens, r.total_tokens
            );
        }
        if self.skipped_rows > 0 {
            let _ = writeln!(out, "\n{} corpus row(s) skipped.", self.skipped_rows);
        }
        out
    }
}
