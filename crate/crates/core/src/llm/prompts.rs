use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use super::backend::Stage;

pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("template {template} has no slot {slot}")]
    UnknownSlot { template: String, slot: String },
    #[error("template {template} slot {slot} was not filled")]
    MissingSlot { template: String, slot: String },
    #[error("reading template {0}: {1}")]
    Io(String, String),
}

/// A plain-text prompt with `{{slot}}` placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub text: String,
}

fn slot_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([a-z_]+)\}\}").expect("regex"))
}

impl Template {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            text: text.into(),
        }
    }

    pub fn slots(&self) -> BTreeSet<String> {
        slot_re()
            .captures_iter(&self.text)
            .map(|c| c[1].to_owned())
            .collect()
    }

    /// Fill every slot. Values are inserted verbatim and never rescanned.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let slots = self.slots();
        if let Some(extra) = values.keys().find(|k| !slots.contains(**k)) {
            return Err(PromptError::UnknownSlot {
                template: self.name.clone(),
                slot: (*extra).to_owned(),
            });
        }
        if let Some(missing) = slots.iter().find(|s| !values.contains_key(s.as_str())) {
            return Err(PromptError::MissingSlot {
                template: self.name.clone(),
                slot: missing.clone(),
            });
        }
        Ok(slot_re()
            .replace_all(&self.text, |c: &regex::Captures| values[&c[1]].clone())
            .into_owned())
    }
}

/// One template per stage.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<Stage, Template>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let builtin = [
            (Stage::Locator, include_str!("../../prompts/locator.v1.txt")),
            (Stage::Cypher, include_str!("../../prompts/cypher.v1.txt")),
            (Stage::Summarizer, include_str!("../../prompts/summarizer.v1.txt")),
            (Stage::Report, include_str!("../../prompts/report.v1.txt")),
            (Stage::Estimator, include_str!("../../prompts/estimator.v1.txt")),
        ];
        Self {
            templates: builtin
                .into_iter()
                .map(|(s, text)| (s, Template::new(format!("{s}.{PROMPT_VERSION}"), text)))
                .collect(),
        }
    }
}

impl PromptSet {
    pub fn get(&self, stage: Stage) -> &Template {
        &self.templates[&stage]
    }

    /// Replace built-in templates with `<stage>.<version>.txt` files found in
    /// `dir`; stages without a file keep the built-in text.
    pub fn with_overrides(mut self, dir: &Path, version: &str) -> Result<Self, PromptError> {
        for stage in Stage::ALL {
            let name = format!("{stage}.{version}");
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| PromptError::Io(path.display().to_string(), e.to_string()))?;
                self.templates.insert(stage, Template::new(name, text));
            }
        }
        Ok(self)
    }
}
