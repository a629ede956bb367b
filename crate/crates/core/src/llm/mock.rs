use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde_json::Value;

use super::backend::{BackendError, Completion, CompletionRequest, LlmBackend, Stage};

/// Replays canned responses keyed by stage and incident id.
///
/// Table format: `{"<stage>": {"<incident id>" | "*": ["response", ...]}}`.
/// Responses for a key are returned in order and the last one repeats.
/// Keys without an entry go to the fallback backend, if any.
pub struct ScriptedBackend {
    table: BTreeMap<(Stage, String), Vec<String>>,
    cursor: Mutex<BTreeMap<(Stage, String), usize>>,
    fallback: Option<Arc<dyn LlmBackend>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self {
            table: BTreeMap::new(),
            cursor: Mutex::new(BTreeMap::new()),
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn LlmBackend>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    /// Script the responses for `(stage, incident)`; `"*"` matches any incident.
    pub fn script<I, S>(mut self, stage: Stage, incident: &str, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.table.insert(
            (stage, incident.to_owned()),
            responses.into_iter().map(Into::into).collect(),
        );
        self
    }

    pub fn from_json(value: &Value) -> Result<Self, BackendError> {
        let err = |m: String| BackendError::Script(m);
        let stages = value
            .as_object()
            .ok_or_else(|| err("response table must be a JSON object".into()))?;
        let mut out = ScriptedBackend::new();
        for (stage_name, per_incident) in stages {
            let stage =
                Stage::parse(stage_name).ok_or_else(|| err(format!("unknown stage {stage_name:?}")))?;
            let per_incident = per_incident
                .as_object()
                .ok_or_else(|| err(format!("stage {stage_name} must map incident ids to responses")))?;
            for (incident, responses) in per_incident {
                let list: Vec<String> = match responses {
                    Value::Array(items) => items.iter().map(response_text).collect(),
                    single => vec![response_text(single)],
                };
                if list.is_empty() {
                    return Err(err(format!("empty response list for {stage_name}/{incident}")));
                }
                out.table.insert((stage, incident.clone()), list);
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        Self::from_json(&value)
    }
}

impl Default for ScriptedBackend {
    fn default() -> Self {
        Self::new()
    }
}

/// Strings are used verbatim; other JSON values are re-serialized so tables
/// can hold structured answers directly.
fn response_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, BackendError> {
        let key = [req.incident_id.as_str(), "*"]
            .into_iter()
            .map(|id| (req.stage, id.to_owned()))
            .find(|k| self.table.contains_key(k));
        let Some(key) = key else {
            return match &self.fallback {
                Some(fb) => fb.complete(req),
                None => Err(BackendError::Script(format!(
                    "no scripted response for stage {} incident {}",
                    req.stage, req.incident_id
                ))),
            };
        };
        let responses = &self.table[&key];
        let idx = {
            let mut cursor = self.cursor.lock().expect("cursor lock");
            let slot = cursor.entry(key.clone()).or_insert(0);
            let idx = (*slot).min(responses.len() - 1);
            *slot += 1;
            idx
        };
        Ok(Completion::estimated(&req.prompt, responses[idx].clone()))
    }

    fn name(&self) -> &str {
        "mock"
    }

    fn network_calls(&self) -> usize {
        self.fallback.as_ref().map_or(0, |f| f.network_calls())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::backend::CompletionParams;
    use serde_json::json;

    fn req(stage: Stage, id: &str) -> CompletionRequest {
        CompletionRequest {
            stage,
            incident_id: id.into(),
            prompt: "p".into(),
            params: CompletionParams::default(),
            context: Value::Null,
        }
    }

    #[test]
    fn responses_advance_and_last_repeats() {
        let b = ScriptedBackend::from_json(&json!({
            "locator": {"inc-1": ["a", "b"], "*": "z"},
            "estimator": {"*": [{"score": 0}]}
        }))
        .unwrap();
        let text = |s, id| b.complete(&req(s, id)).unwrap().text;
        assert_eq!(text(Stage::Locator, "inc-1"), "a");
        assert_eq!(text(Stage::Locator, "inc-1"), "b");
        assert_eq!(text(Stage::Locator, "inc-1"), "b");
        assert_eq!(text(Stage::Locator, "other"), "z");
        assert_eq!(text(Stage::Estimator, "x"), r#"{"score":0}"#);
        assert!(b.complete(&req(Stage::Report, "x")).is_err());
    }

    #[test]
    fn bad_tables_are_rejected() {
        assert!(ScriptedBackend::from_json(&json!([])).is_err());
        assert!(ScriptedBackend::from_json(&json!({"nope": {}})).is_err());
        assert!(ScriptedBackend::from_json(&json!({"locator": {"*": []}})).is_err());
    }
}
