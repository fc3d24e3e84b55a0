//! Subgroups and the per-subgroup analyses: ranking, centroids, representatives,
//! extremes and neighbouring clusters.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusteringConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gateway::GatewayIdentity;
use crate::hashing::short_hash;
use crate::hypothesis::CandidateIssue;
use crate::search::{cosine_similarity, ConceptQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum SubgroupKind {
    Cluster,
    Concept,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Cluster {
        config: ClusteringConfig,
        /// `None` for the DBSCAN noise pseudo-subgroup.
        cluster_index: Option<usize>,
    },
    Concept {
        query: ConceptQuery,
        gateway: GatewayIdentity,
    },
    Custom {
        description: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CachedSummary {
    pub text: String,
    pub max_words: usize,
    pub prompt_hash: String,
    pub gateway: GatewayIdentity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CachedRepresentatives {
    pub n: usize,
    pub trim_fraction: f64,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CachedExtremes {
    pub metric: String,
    pub n: usize,
    pub worst: Vec<String>,
    pub best: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CachedIssues {
    pub metric: String,
    pub gateway: GatewayIdentity,
    pub issues: Vec<CandidateIssue>,
}

/// Analysis artifacts attached to a subgroup. Each slot is written once; replacing it
/// requires an explicit force.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SubgroupCache {
    /// Summaries keyed by their word limit, so the table and detail views keep separate texts.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub summaries: BTreeMap<usize, CachedSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representatives: Option<CachedRepresentatives>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extremes: Option<CachedExtremes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issues: Option<CachedIssues>,
}

/// Returns whether `slot` was written.
fn write_once<T>(slot: &mut Option<T>, value: T, force: bool) -> bool {
    if slot.is_some() && !force {
        return false;
    }
    *slot = Some(value);
    true
}

impl SubgroupCache {
    pub fn set_summary(&mut self, value: CachedSummary, force: bool) -> bool {
        if self.summaries.contains_key(&value.max_words) && !force {
            return false;
        }
        self.summaries.insert(value.max_words, value);
        true
    }

    pub fn summary(&self, max_words: usize) -> Option<&CachedSummary> {
        self.summaries.get(&max_words)
    }
    pub fn set_representatives(&mut self, value: CachedRepresentatives, force: bool) -> bool {
        write_once(&mut self.representatives, value, force)
    }
    pub fn set_extremes(&mut self, value: CachedExtremes, force: bool) -> bool {
        write_once(&mut self.extremes, value, force)
    }
    pub fn set_issues(&mut self, value: CachedIssues, force: bool) -> bool {
        write_once(&mut self.issues, value, force)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Subgroup {
    pub id: String,
    pub kind: SubgroupKind,
    /// Ordered, duplicate-free sample ids.
    pub members: Vec<String>,
    pub provenance: Provenance,
    #[serde(default)]
    pub cache: SubgroupCache,
}

impl Subgroup {
    /// A manually selected subgroup. Duplicate ids are dropped, first occurrence wins.
    pub fn custom<I, S>(members: I, description: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let members: Vec<String> = members
            .into_iter()
            .map(Into::into)
            .filter(|m| seen.insert(m.clone()))
            .collect();
        let description = description.into();
        let id = format!("custom-{}", short_hash(format!("{description}|{}", members.join("\n"))));
        Self {
            id,
            kind: SubgroupKind::Custom,
            members,
            provenance: Provenance::Custom { description },
            cache: SubgroupCache::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Checks membership against the dataset and the per-kind invariants.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let mut seen = HashSet::new();
        for m in &self.members {
            if !dataset.contains(m) {
                return Err(Error::UnknownSample(m.clone()));
            }
            if !seen.insert(m) {
                return Err(Error::InvalidArgument(format!("subgroup {} lists {m} twice", self.id)));
            }
        }
        if self.kind == SubgroupKind::Cluster
            && self.members.is_empty()
            && matches!(self.provenance, Provenance::Cluster { cluster_index: Some(_), .. })
        {
            return Err(Error::InvalidArgument(format!("cluster {} is empty", self.id)));
        }
        Ok(())
    }

    /// Dataset row indices of the members, in member order.
    pub fn indices(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        self.members.iter().map(|m| dataset.index_of(m)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RankedSubgroup {
    pub id: String,
    pub size: usize,
    /// `None` for empty subgroups, which rank last.
    pub mean_metric: Option<f64>,
}

pub fn mean_metric(subgroup: &Subgroup, dataset: &Dataset, metric: &str) -> Result<Option<f64>> {
    dataset.descriptor(metric)?;
    let idx = subgroup.indices(dataset)?;
    if idx.is_empty() {
        return Ok(None);
    }
    Ok(Some(idx.iter().map(|&i| dataset.metric_value(i, metric)).sum::<f64>() / idx.len() as f64))
}

/// Orders subgroups worst first by mean metric; ties go to the larger subgroup, then the
/// smaller id.
pub fn rank_subgroups(subgroups: &[Subgroup], dataset: &Dataset, metric: &str) -> Result<Vec<RankedSubgroup>> {
    let direction = dataset.descriptor(metric)?.direction;
    let mut ranked = subgroups
        .iter()
        .map(|s| {
            Ok(RankedSubgroup {
                id: s.id.clone(),
                size: s.len(),
                mean_metric: mean_metric(s, dataset, metric)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        let by_mean = match (a.mean_metric, b.mean_metric) {
            (Some(x), Some(y)) => direction
                .badness(y)
                .partial_cmp(&direction.badness(x))
                .unwrap_or(Ordering::Equal),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        by_mean.then(b.size.cmp(&a.size)).then_with(|| a.id.cmp(&b.id))
    });
    Ok(ranked)
}

fn mean_of_rows(dataset: &Dataset, rows: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; dataset.dim()];
    for &i in rows {
        for (a, v) in acc.iter_mut().zip(dataset.store().row(i)) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Cosine similarity that treats a zero vector as similarity 0.
fn similarity_or_zero(a: &[f64], b: &[f64]) -> f64 {
    cosine_similarity(a, b).unwrap_or(0.0)
}

/// Mean member embedding, optionally after discarding the `trim_fraction` of members
/// least similar to the untrimmed mean.
pub fn centroid(subgroup: &Subgroup, dataset: &Dataset, trim_fraction: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&trim_fraction) {
        return Err(Error::InvalidArgument(format!("trim_fraction {trim_fraction} outside [0, 1)")));
    }
    let idx = subgroup.indices(dataset)?;
    if idx.is_empty() {
        return Err(Error::EmptyInput("subgroup members"));
    }
    let mean = mean_of_rows(dataset, &idx);
    let drop = (trim_fraction * idx.len() as f64 + 1e-9).floor() as usize;
    if drop == 0 {
        return Ok(mean);
    }
    if drop >= idx.len() {
        return Err(Error::InvalidArgument("trimming would empty the subgroup".into()));
    }
    let mut scored: Vec<(f64, usize)> = idx
        .iter()
        .map(|&i| (similarity_or_zero(&mean, dataset.store().row(i)), i))
        .collect();
    // Most similar first; the tail is trimmed.
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| dataset.record(a.1).id.cmp(&dataset.record(b.1).id))
    });
    let kept: Vec<usize> = scored[..idx.len() - drop].iter().map(|&(_, i)| i).collect();
    Ok(mean_of_rows(dataset, &kept))
}

/// Members ordered by similarity to `target`, most similar first, ties by id.
fn members_by_similarity(subgroup: &Subgroup, dataset: &Dataset, target: &[f64]) -> Result<Vec<(String, f64)>> {
    let mut scored = subgroup
        .members
        .iter()
        .map(|m| Ok((m.clone(), similarity_or_zero(target, dataset.embedding(m)?))))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    Ok(scored)
}

/// Member ids in order of proximity to the centroid, closest first.
pub fn proximity_order(subgroup: &Subgroup, dataset: &Dataset, trim_fraction: f64) -> Result<Vec<String>> {
    if subgroup.is_empty() {
        return Ok(Vec::new());
    }
    let c = centroid(subgroup, dataset, trim_fraction)?;
    Ok(members_by_similarity(subgroup, dataset, &c)?
        .into_iter()
        .map(|(id, _)| id)
        .collect())
}

/// The `n` members closest (cosine) to the subgroup centroid.
pub fn representatives(subgroup: &Subgroup, dataset: &Dataset, n: usize, trim_fraction: f64) -> Result<Vec<String>> {
    let mut order = proximity_order(subgroup, dataset, trim_fraction)?;
    order.truncate(n);
    Ok(order)
}

/// Worst and best `n` members under the metric's direction, each ordered from the extreme
/// inwards with ties broken by id.
pub fn extremes(subgroup: &Subgroup, dataset: &Dataset, metric: &str, n: usize) -> Result<(Vec<String>, Vec<String>)> {
    let direction = dataset.descriptor(metric)?.direction;
    let scored = subgroup
        .members
        .iter()
        .map(|m| Ok((m.as_str(), direction.badness(dataset.metric_value(dataset.index_of(m)?, metric)))))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = scored.clone();
    worst.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0)));
    let mut best = scored;
    best.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0)));
    let take = |v: Vec<(&str, f64)>| v.into_iter().take(n).map(|(id, _)| id.to_string()).collect();
    Ok((take(worst), take(best)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct NeighborCluster {
    pub subgroup_id: String,
    pub centroid_similarity: f64,
}

/// The `k` candidates whose centroids are most cosine-similar to the target's centroid.
/// The target itself (by id) and empty candidates are skipped.
pub fn neighbor_clusters(
    target: &Subgroup,
    candidates: &[Subgroup],
    dataset: &Dataset,
    k: usize,
) -> Result<Vec<NeighborCluster>> {
    if target.is_empty() {
        return Ok(Vec::new());
    }
    let t = centroid(target, dataset, 0.0)?;
    let mut out = Vec::new();
    for c in candidates {
        if c.id == target.id || c.is_empty() {
            continue;
        }
        let cc = centroid(c, dataset, 0.0)?;
        out.push(NeighborCluster {
            subgroup_id: c.id.clone(),
            centroid_similarity: similarity_or_zero(&t, &cc),
        });
    }
    out.sort_by(|a, b| {
        b.centroid_similarity
            .partial_cmp(&a.centroid_similarity)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.subgroup_id.cmp(&b.subgroup_id))
    });
    out.truncate(k);
    Ok(out)
}
