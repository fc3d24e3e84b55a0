//! Histograms, percentile-bootstrap intervals on the mean, set overlap and the CI-overlap
//! significance rule used when comparing subgroups.
//!
//! Bootstrap resampling draws indices from `ChaCha8Rng::seed_from_u64(seed)`; the generator
//! choice is part of the output contract and pinned by golden tests.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::subgroup::Subgroup;

pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub domain: [f64; 2],
    /// Values outside `domain`, excluded from `counts`.
    pub out_of_domain: u64,
}

/// Uniform-width histogram. The first bin is closed on both sides; every later bin is
/// `(left, right]`, so a value sitting on an interior edge lands in the bin to its left.
pub fn histogram(values: &[f64], bins: usize, domain: [f64; 2]) -> Result<Histogram> {
    let [lo, hi] = domain;
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("histogram domain [{lo}, {hi}] is empty")));
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    edges[bins] = hi;
    let mut counts = vec![0u64; bins];
    let mut outside = 0;
    for &v in values {
        if !(v >= lo && v <= hi) {
            outside += 1;
            continue;
        }
        let mut b = (((v - lo) / width).ceil() as usize).saturating_sub(1).min(bins - 1);
        while b > 0 && v <= edges[b] {
            b -= 1;
        }
        while b + 1 < bins && v > edges[b + 1] {
            b += 1;
        }
        counts[b] += 1;
    }
    Ok(Histogram {
        bin_edges: edges,
        counts,
        domain,
        out_of_domain: outside,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct IntervalEstimate {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear interpolation between order statistics of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval for the mean: the `alpha/2` and `1 - alpha/2` quantiles of
/// `resamples` resampled means. The interval is widened to contain the sample mean when the
/// resampled quantiles miss it, which can only happen with very few resamples.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, alpha: f64, seed: u64) -> Result<IntervalEstimate> {
    if values.is_empty() {
        return Err(Error::EmptyInput("bootstrap values"));
    }
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("bootstrap input".into()));
    }
    let n = values.len();
    let m = mean(values);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(|a, b| a.total_cmp(b));
    let lo = quantile(&means, alpha / 2.0).min(m);
    let hi = quantile(&means, 1.0 - alpha / 2.0).max(m);
    Ok(IntervalEstimate {
        mean: m,
        lo,
        hi,
        resamples,
        alpha,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Overlap {
    pub shared_ids: Vec<String>,
    pub only_1_ids: Vec<String>,
    pub only_2_ids: Vec<String>,
}

/// Partitions the union of two subgroups. Shared and first-only ids follow the first
/// subgroup's order, second-only ids the second's.
pub fn overlap(s1: &Subgroup, s2: &Subgroup) -> Overlap {
    let a: HashSet<&str> = s1.members.iter().map(String::as_str).collect();
    let b: HashSet<&str> = s2.members.iter().map(String::as_str).collect();
    let (shared_ids, only_1_ids) = s1.members.iter().cloned().partition(|m| b.contains(m.as_str()));
    let only_2_ids = s2.members.iter().filter(|m| !a.contains(m.as_str())).cloned().collect();
    Overlap {
        shared_ids,
        only_1_ids,
        only_2_ids,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Significant,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Significance {
    pub verdict: Verdict,
    pub explanation: String,
}

/// Significant exactly when the two intervals are disjoint; touching endpoints overlap.
pub fn significance(ci1: &IntervalEstimate, ci2: &IntervalEstimate) -> Result<Significance> {
    if (ci1.alpha - ci2.alpha).abs() > 1e-12 {
        return Err(Error::AlphaMismatch(ci1.alpha, ci2.alpha));
    }
    let disjoint = ci1.hi < ci2.lo || ci2.hi < ci1.lo;
    let level = (1.0 - ci1.alpha) * 100.0;
    let describe = |c: &IntervalEstimate| format!("{:.4} [{:.4}, {:.4}]", c.mean, c.lo, c.hi);
    let (verdict, tail) = if disjoint {
        (
            Verdict::Significant,
            "the intervals do not overlap, suggesting a significant difference in means",
        )
    } else {
        (
            Verdict::Inconclusive,
            "the intervals overlap, so the difference in means may be random variation",
        )
    };
    Ok(Significance {
        verdict,
        explanation: format!(
            "means {} and {} ({level:.0}% CI): {tail}",
            describe(ci1),
            describe(ci2)
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CompareOptions {
    #[serde(default)]
    pub exclude_shared: bool,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Restricts the report to these metrics; all declared metrics when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Vec<String>>,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            exclude_shared: false,
            bins: DEFAULT_BINS,
            resamples: DEFAULT_RESAMPLES,
            alpha: DEFAULT_ALPHA,
            seed: DEFAULT_SEED,
            metrics: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SubgroupSize {
    pub subgroup_id: String,
    pub absolute: usize,
    pub fraction: f64,
    /// Members left after shared-sample exclusion.
    pub analyzed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GroupStats {
    pub group_id: String,
    /// False when exclusion emptied the group; statistics are then absent.
    pub available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Histogram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<IntervalEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PairVerdict {
    pub left: String,
    pub right: String,
    pub verdict: Verdict,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MetricComparison {
    pub domain: [f64; 2],
    pub dataset: GroupStats,
    pub subgroups: Vec<GroupStats>,
    pub verdicts: Vec<PairVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ComparisonReport {
    pub subgroup_ids: Vec<String>,
    pub dataset_size: usize,
    pub sizes: Vec<SubgroupSize>,
    pub shared_count: usize,
    pub exclude_shared: bool,
    pub per_metric: BTreeMap<String, MetricComparison>,
}

pub const DATASET_GROUP: &str = "dataset";

fn display_domain(dataset: &Dataset, metric: &str, values: &[f64]) -> Result<[f64; 2]> {
    if let Some(range) = dataset.descriptor(metric)?.display_range {
        return Ok(range);
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Ok([0.0, 1.0]);
    }
    Ok(if lo < hi { [lo, hi] } else { [lo - 0.5, hi + 0.5] })
}

fn group_stats(id: &str, values: Option<Vec<f64>>, domain: [f64; 2], options: &CompareOptions) -> Result<GroupStats> {
    match values {
        Some(v) if !v.is_empty() => Ok(GroupStats {
            group_id: id.to_string(),
            available: true,
            histogram: Some(histogram(&v, options.bins, domain)?),
            interval: Some(bootstrap_mean_ci(&v, options.resamples, options.alpha, options.seed)?),
        }),
        _ => Ok(GroupStats {
            group_id: id.to_string(),
            available: false,
            histogram: None,
            interval: None,
        }),
    }
}

fn pair(a: &GroupStats, b: &GroupStats) -> Result<Option<PairVerdict>> {
    match (&a.interval, &b.interval) {
        (Some(x), Some(y)) => {
            let s = significance(x, y)?;
            Ok(Some(PairVerdict {
                left: a.group_id.clone(),
                right: b.group_id.clone(),
                verdict: s.verdict,
                explanation: s.explanation,
            }))
        }
        _ => Ok(None),
    }
}

/// Compares one or two subgroups against the whole dataset (and each other) on every
/// requested metric.
///
/// Metric values are taken in dataset order so that identical member sets always produce
/// identical statistics. With `exclude_shared`, members common to both subgroups are removed
/// from both before any statistic; the dataset baseline is never filtered.
pub fn compare_subgroups(selection: &[&Subgroup], dataset: &Dataset, options: &CompareOptions) -> Result<ComparisonReport> {
    if selection.is_empty() || selection.len() > 2 {
        return Err(Error::InvalidArgument(format!(
            "comparison takes one or two subgroups, got {}",
            selection.len()
        )));
    }
    let metrics: Vec<String> = match &options.metrics {
        Some(m) => {
            for name in m {
                dataset.descriptor(name)?;
            }
            m.clone()
        }
        None => dataset.metric_names().map(String::from).collect(),
    };

    let shared: HashSet<String> = if selection.len() == 2 {
        overlap(selection[0], selection[1]).shared_ids.into_iter().collect()
    } else {
        HashSet::new()
    };
    let mut analyzed: Vec<Vec<usize>> = Vec::new();
    for s in selection {
        let mut idx: Vec<usize> = s
            .members
            .iter()
            .filter(|m| !(options.exclude_shared && shared.contains(*m)))
            .map(|m| dataset.index_of(m))
            .collect::<Result<_>>()?;
        idx.sort_unstable();
        analyzed.push(idx);
    }

    let n = dataset.len();
    let sizes = selection
        .iter()
        .zip(&analyzed)
        .map(|(s, idx)| SubgroupSize {
            subgroup_id: s.id.clone(),
            absolute: s.len(),
            fraction: if n == 0 { 0.0 } else { s.len() as f64 / n as f64 },
            analyzed: idx.len(),
        })
        .collect();

    let mut per_metric = BTreeMap::new();
    for metric in &metrics {
        let all = dataset.metric_vector(metric)?;
        let domain = display_domain(dataset, metric, &all)?;
        let baseline = group_stats(DATASET_GROUP, Some(all.clone()), domain, options)?;
        let groups = selection
            .iter()
            .zip(&analyzed)
            .map(|(s, idx)| {
                let values = (!idx.is_empty()).then(|| idx.iter().map(|&i| all[i]).collect());
                group_stats(&s.id, values, domain, options)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut verdicts = Vec::new();
        for g in &groups {
            verdicts.extend(pair(g, &baseline)?);
        }
        if groups.len() == 2 {
            verdicts.extend(pair(&groups[0], &groups[1])?);
        }
        per_metric.insert(
            metric.clone(),
            MetricComparison {
                domain,
                dataset: baseline,
                subgroups: groups,
                verdicts,
            },
        );
    }

    Ok(ComparisonReport {
        subgroup_ids: selection.iter().map(|s| s.id.clone()).collect(),
        dataset_size: n,
        sizes,
        shared_count: shared.len(),
        exclude_shared: options.exclude_shared,
        per_metric,
    })
}
