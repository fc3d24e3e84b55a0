//! Prompt templates for subgroup summaries and candidate-issue proposals.
//!
//! Templates use `{name}` placeholders. A bundle can be loaded from a TOML file:
//!
//! ```toml
//! summary_template = "I have the following data: {data}. Please summarize all these data using less than {num_word} words."
//! issues_template = "... {captions} ..."
//! domain_hint = "Useful characteristics include ..."
//! ```

use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUMMARY_PLACEHOLDERS: [&str; 2] = ["data", "num_word"];
pub const ISSUES_PLACEHOLDERS: [&str; 1] = ["captions"];

/// Word limit for the short summaries shown in subgroup tables.
pub const TABLE_SUMMARY_WORDS: usize = 15;
/// Word limit for the longer single-subgroup description.
pub const DETAIL_SUMMARY_WORDS: usize = 60;

pub const DEFAULT_SUMMARY_TEMPLATE: &str =
    "I have the following data: {data}. Please summarize all these data using less than {num_word} words.";

pub const DEFAULT_ISSUES_TEMPLATE: &str = "The following are the result of captioning two groups of images: {captions}.

I am a machine learning researcher trying to figure out the major differences between these two groups so I can better understand my data.

Come up with 10 distinct concepts that are more likely to be true for Group A compared to Group B. Please write a list of captions.

Answer with exactly one concept per line. Each concept must be 1-5 words. Do not add numbering, explanations or any other text.
Correct output:
wearing a headscarf
perforated plastic container
Incorrect output:
1. Group A images more often show people wearing headscarves than Group B images do.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct PromptBundle {
    pub summary_template: String,
    pub issues_template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_hint: Option<String>,
}

impl Default for PromptBundle {
    fn default() -> Self {
        Self {
            summary_template: DEFAULT_SUMMARY_TEMPLATE.to_string(),
            issues_template: DEFAULT_ISSUES_TEMPLATE.to_string(),
            domain_hint: None,
        }
    }
}

impl PromptBundle {
    pub fn with_domain_hint(mut self, hint: impl Into<String>) -> Self {
        self.domain_hint = Some(hint.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_placeholders("summary_template", &self.summary_template, &SUMMARY_PLACEHOLDERS)?;
        check_placeholders("issues_template", &self.issues_template, &ISSUES_PLACEHOLDERS)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let bundle: PromptBundle = toml::from_str(text).map_err(|e| Error::Template(e.to_string()))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if after[..end].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && end > 0 => {
                out.push(&after[..end]);
                rest = &after[end + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

fn check_placeholders(which: &str, template: &str, expected: &[&str]) -> Result<()> {
    let found = placeholders(template);
    for name in expected {
        let count = found.iter().filter(|f| *f == name).count();
        if count != 1 {
            return Err(Error::Template(format!(
                "{which} must contain {{{name}}} exactly once, found {count}"
            )));
        }
    }
    if let Some(extra) = found.iter().find(|f| !expected.contains(f)) {
        return Err(Error::Template(format!("{which} has unknown placeholder {{{extra}}}")));
    }
    Ok(())
}

/// Substitutes placeholders in a single pass, so values containing `{...}` are never
/// re-expanded.
pub(crate) fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let hit = after
            .find('}')
            .and_then(|end| values.iter().find(|(k, _)| *k == &after[..end]).map(|(_, v)| (end, *v)));
        match hit {
            Some((end, value)) => {
                out.push_str(value);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
