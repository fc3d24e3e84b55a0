//! Subgroup summaries and candidate error causes.
//!
//! Candidate issues come from a chat model asked to contrast the captions of a subgroup's
//! worst performers (group A) with its best performers (group B). Each issue is then scored
//! by how well its text embedding separates A from B: the AUROC of cosine similarity as a
//! classifier for membership in A.

use std::cmp::Ordering;
use std::collections::HashSet;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gateway::{Gateway, GatewayIdentity};
use crate::hashing::short_hash;
use crate::prompt::{render, PromptBundle, TABLE_SUMMARY_WORDS};
use crate::search::cosine_similarity;
use crate::subgroup::{extremes, proximity_order, CachedIssues, CachedSummary, Subgroup};

pub const DEFAULT_PER_GROUP_N: usize = 10;
pub const DEFAULT_CAPTION_BUDGET: usize = 12_000;
pub const MAX_ISSUES: usize = 10;
pub const MAX_ISSUE_WORDS: usize = 5;
/// Metric range below which a subgroup counts as uniformly performing.
pub const UNIFORM_RANGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ExtremeSplit {
    pub group_a: Vec<String>,
    pub group_b: Vec<String>,
    pub metric_name: String,
    pub per_group_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct IssueProvenance {
    pub subgroup_id: String,
    pub split: ExtremeSplit,
    pub gateway: GatewayIdentity,
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CandidateIssue {
    pub text: String,
    pub confidence: f64,
    /// Set when the model ignored the word limit.
    pub exceeds_word_limit: bool,
    pub provenance: IssueProvenance,
}

/// Worst `m` members as group A and best `m` as group B, where
/// `m = min(per_group_n, |members| / 2)`.
pub fn split_extremes(subgroup: &Subgroup, dataset: &Dataset, metric: &str, per_group_n: usize) -> Result<ExtremeSplit> {
    dataset.descriptor(metric)?;
    if subgroup.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "subgroup {} needs at least 2 members to split, has {}",
            subgroup.id,
            subgroup.len()
        )));
    }
    let m = per_group_n.min(subgroup.len() / 2);
    let (group_a, group_b) = extremes(subgroup, dataset, metric, m)?;
    Ok(ExtremeSplit {
        group_a,
        group_b,
        metric_name: metric.to_string(),
        per_group_n,
    })
}

/// Captioned members in order of centroid proximity, taking each caption that still fits in
/// `budget_chars` (measured in characters) and skipping those that do not.
pub fn select_for_context(subgroup: &Subgroup, dataset: &Dataset, budget_chars: usize, trim_fraction: f64) -> Result<Vec<String>> {
    if budget_chars == 0 {
        return Err(Error::InvalidArgument("caption budget must be positive".into()));
    }
    let mut used = 0;
    let mut picked = Vec::new();
    for id in proximity_order(subgroup, dataset, trim_fraction)? {
        let Some(caption) = dataset.caption(&id).filter(|c| !c.is_empty()) else {
            continue;
        };
        let len = caption.chars().count();
        if used + len <= budget_chars {
            used += len;
            picked.push(id);
        }
    }
    Ok(picked)
}

pub fn build_summary_prompt(captions: &[&str], max_words: usize, bundle: &PromptBundle) -> Result<String> {
    if captions.is_empty() {
        return Err(Error::EmptyInput("captions"));
    }
    let data = captions.join("; ");
    let words = max_words.to_string();
    let mut prompt = render(&bundle.summary_template, &[("data", &data), ("num_word", &words)]);
    if let Some(hint) = &bundle.domain_hint {
        prompt.push(' ');
        prompt.push_str(hint);
    }
    Ok(prompt)
}

/// Fills the caption placeholder with `Group A: <caption>` entries followed by
/// `Group B: <caption>` entries, one per line, separated by `;`.
pub fn build_issues_prompt(split: &ExtremeSplit, dataset: &Dataset, bundle: &PromptBundle) -> Result<String> {
    let missing: Vec<String> = split
        .group_a
        .iter()
        .chain(&split.group_b)
        .filter(|id| dataset.caption(id).is_none_or(str::is_empty))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCaptions(missing));
    }
    let entries: Vec<String> = split
        .group_a
        .iter()
        .map(|id| ("A", id))
        .chain(split.group_b.iter().map(|id| ("B", id)))
        .map(|(g, id)| format!("Group {g}: {}", dataset.caption(id).unwrap_or_default()))
        .collect();
    Ok(render(&bundle.issues_template, &[("captions", &entries.join(";\n"))]))
}

/// Area under the ROC curve of `scores` separating `positives` from `negatives`: the
/// probability that a random positive outscores a random negative, ties counting one half.
/// Computed from mid-ranks in `O(n log n)`.
pub fn auroc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::EmptyInput("auroc needs both classes"));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::NonFinite("auroc score".into()));
    }
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    // Twice the positive rank sum keeps mid-ranks integral.
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share the mid-rank (i+1+j)/2.
        let mid_x2 = (i + 1 + j) as u64;
        let pos = all[i..j].iter().filter(|(_, p)| *p).count() as u64;
        rank_sum_x2 += pos * mid_x2;
        i = j;
    }
    let (np, nn) = (positives.len() as u64, negatives.len() as u64);
    let u_x2 = rank_sum_x2 - np * (np + 1);
    Ok(u_x2 as f64 / 2.0 / (np * nn) as f64)
}

/// Similarities of `vector` to each listed sample.
fn similarities(dataset: &Dataset, vector: &[f64], ids: &[String]) -> Result<Vec<f64>> {
    ids.iter().map(|id| cosine_similarity(vector, dataset.embedding(id)?)).collect()
}

/// Confidence of an issue: AUROC of issue-to-sample cosine similarity as a score for group A.
pub fn score_issue(issue_text: &str, split: &ExtremeSplit, dataset: &Dataset, gateway: &dyn Gateway) -> Result<f64> {
    if split.group_a.is_empty() || split.group_b.is_empty() {
        return Err(Error::EmptyInput("extreme split"));
    }
    let v = gateway.embed_text(issue_text)?;
    score_vector(&v, split, dataset)
}

pub fn score_vector(vector: &[f64], split: &ExtremeSplit, dataset: &Dataset) -> Result<f64> {
    let a = similarities(dataset, vector, &split.group_a)?;
    let b = similarities(dataset, vector, &split.group_b)?;
    auroc(&a, &b)
}

/// Extracts one concept per line, dropping blank lines, list markers and duplicates, and
/// keeping at most [`MAX_ISSUES`].
pub fn parse_concepts(raw: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    raw.lines()
        .map(strip_marker)
        .map(|s| s.trim().trim_matches(|c| c == '"' || c == '\'').trim().to_string())
        .filter(|s| !s.is_empty())
        .filter(|s| seen.insert(s.to_lowercase()))
        .take(MAX_ISSUES)
        .collect()
}

fn strip_marker(line: &str) -> &str {
    let s = line.trim_start();
    let s = s.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r;
        }
    }
    s
}

/// Asks the chat model for candidate issues of a subgroup and ranks them by confidence,
/// highest first, ties alphabetical.
pub fn propose_issues(
    subgroup: &Subgroup,
    dataset: &Dataset,
    metric: &str,
    gateway: &dyn Gateway,
    bundle: &PromptBundle,
    per_group_n: usize,
) -> Result<Vec<CandidateIssue>> {
    dataset.descriptor(metric)?;
    let values = subgroup
        .members
        .iter()
        .map(|m| Ok(dataset.metric_value(dataset.index_of(m)?, metric)))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if values.len() >= 2 && hi - lo < UNIFORM_RANGE {
        return Err(Error::UniformPerformance {
            subgroup: subgroup.id.clone(),
            metric: metric.to_string(),
        });
    }
    let split = split_extremes(subgroup, dataset, metric, per_group_n)?;
    let prompt = build_issues_prompt(&split, dataset, bundle)?;
    let raw = gateway.complete(&prompt)?;
    let concepts = parse_concepts(&raw);
    if concepts.is_empty() {
        return Err(Error::UnparseableResponse { raw });
    }
    let provenance = IssueProvenance {
        subgroup_id: subgroup.id.clone(),
        split: split.clone(),
        gateway: gateway.identity().clone(),
        prompt_hash: short_hash(&prompt),
    };
    let mut issues = concepts
        .into_iter()
        .map(|text| {
            let confidence = score_issue(&text, &split, dataset, gateway)?;
            Ok(CandidateIssue {
                exceeds_word_limit: text.split_whitespace().count() > MAX_ISSUE_WORDS,
                text,
                confidence,
                provenance: provenance.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    issues.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.text.cmp(&b.text))
    });
    Ok(issues)
}

/// Proposes issues and stores them on the subgroup cache (write-once unless `force`, and
/// never reusing issues produced by a different gateway).
pub fn cached_issues(
    subgroup: &mut Subgroup,
    dataset: &Dataset,
    metric: &str,
    gateway: &dyn Gateway,
    bundle: &PromptBundle,
    per_group_n: usize,
    force: bool,
) -> Result<Vec<CandidateIssue>> {
    if let Some(c) = &subgroup.cache.issues {
        if !force && c.metric == metric && &c.gateway == gateway.identity() {
            return Ok(c.issues.clone());
        }
    }
    let issues = propose_issues(subgroup, dataset, metric, gateway, bundle, per_group_n)?;
    subgroup.cache.set_issues(
        CachedIssues {
            metric: metric.to_string(),
            gateway: gateway.identity().clone(),
            issues: issues.clone(),
        },
        true,
    );
    Ok(issues)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SummaryOptions {
    pub max_words: usize,
    pub budget_chars: usize,
    pub trim_fraction: f64,
    pub force: bool,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self {
            max_words: TABLE_SUMMARY_WORDS,
            budget_chars: DEFAULT_CAPTION_BUDGET,
            trim_fraction: 0.0,
            force: false,
        }
    }
}

/// Summarizes the captions of the members nearest the centroid and caches the result on the
/// subgroup under its word limit. A cached summary from the same gateway is returned without a gateway call
/// unless `force` is set.
pub fn summarize_subgroup(
    subgroup: &mut Subgroup,
    dataset: &Dataset,
    gateway: &dyn Gateway,
    bundle: &PromptBundle,
    options: &SummaryOptions,
) -> Result<String> {
    if let Some(cached) = subgroup.cache.summary(options.max_words) {
        if !options.force && &cached.gateway == gateway.identity() {
            return Ok(cached.text.clone());
        }
    }
    let captioned = subgroup
        .members
        .iter()
        .filter(|m| dataset.caption(m).is_some_and(|c| !c.is_empty()))
        .count();
    if captioned == 0 {
        return Err(Error::NoCaptions(subgroup.id.clone()));
    }
    let ids = select_for_context(subgroup, dataset, options.budget_chars, options.trim_fraction)?;
    if ids.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no caption of subgroup {} fits the {}-character budget",
            subgroup.id, options.budget_chars
        )));
    }
    let captions: Vec<&str> = ids.iter().filter_map(|id| dataset.caption(id)).collect();
    let prompt = build_summary_prompt(&captions, options.max_words, bundle)?;
    let text = gateway.complete(&prompt)?;
    subgroup.cache.set_summary(
        CachedSummary {
            text: text.clone(),
            max_words: options.max_words,
            prompt_hash: short_hash(&prompt),
            gateway: gateway.identity().clone(),
        },
        true,
    );
    Ok(text)
}
