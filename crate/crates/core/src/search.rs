//! Cosine-similarity retrieval over the embedding store.

use std::cmp::Ordering;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::hashing::short_hash;
use crate::subgroup::{Provenance, Subgroup, SubgroupKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SearchHit {
    pub sample_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MetricFilter {
    pub metric: String,
    pub range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ConceptQuery {
    pub text: String,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_filter: Option<MetricFilter>,
}

impl ConceptQuery {
    pub fn new(text: impl Into<String>, k: usize) -> Self {
        Self {
            text: text.into(),
            k,
            min_similarity: None,
            metric_filter: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::InvalidArgument("query text must be nonempty".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if let Some(t) = self.min_similarity {
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::InvalidArgument(format!("min_similarity {t} outside [-1, 1]")));
            }
        }
        if let Some(f) = &self.metric_filter {
            if !(f.range[0] <= f.range[1]) {
                return Err(Error::InvalidArgument(format!(
                    "metric range [{}, {}] is inverted",
                    f.range[0], f.range[1]
                )));
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine similarity".into(),
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Similarity of `query` (with precomputed norm) against row `i` of the store.
pub(crate) fn similarity_to_row(dataset: &Dataset, query: &[f64], query_norm: f64, i: usize) -> f64 {
    let store = dataset.store();
    dot(query, store.row(i)) / (query_norm * store.norm(i))
}

/// Descending similarity, ascending id on ties.
pub(crate) fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.sample_id.cmp(&b.sample_id))
}

/// Exhaustive scan returning at most `k` hits, most similar first.
pub fn top_k(dataset: &Dataset, query: &[f64], k: usize, min_similarity: Option<f64>) -> Result<Vec<SearchHit>> {
    if query.len() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            context: "query vector".into(),
            expected: dataset.dim(),
            actual: query.len(),
        });
    }
    let qn = norm(query);
    if qn == 0.0 || !qn.is_finite() {
        return Err(Error::ZeroVector);
    }
    let mut hits: Vec<SearchHit> = (0..dataset.len())
        .map(|i| SearchHit {
            sample_id: dataset.record(i).id.clone(),
            similarity: similarity_to_row(dataset, query, qn, i),
        })
        .filter(|h| min_similarity.is_none_or(|t| h.similarity >= t))
        .collect();
    if k < hits.len() {
        hits.select_nth_unstable_by(k, hit_order);
        hits.truncate(k);
    }
    hits.sort_by(hit_order);
    Ok(hits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ConceptSearchResult {
    pub subgroup: Subgroup,
    pub hits: Vec<SearchHit>,
}

/// Embeds the query text through the gateway and turns the nearest samples into a
/// concept subgroup. An empty result is a valid, empty subgroup.
pub fn concept_search(dataset: &Dataset, query: &ConceptQuery, gateway: &dyn Gateway) -> Result<ConceptSearchResult> {
    query.validate()?;
    if let Some(f) = &query.metric_filter {
        dataset.descriptor(&f.metric)?;
    }
    let vector = gateway.embed_text(&query.text)?;
    let mut hits = top_k(dataset, &vector, query.k, query.min_similarity)?;
    if let Some(f) = &query.metric_filter {
        hits.retain(|h| {
            let i = dataset.index_of(&h.sample_id).expect("hit ids come from the dataset");
            let v = dataset.metric_value(i, &f.metric);
            v >= f.range[0] && v <= f.range[1]
        });
    }
    let identity = gateway.identity().clone();
    let key = serde_json::to_string(&(query, &identity)).unwrap_or_default();
    let subgroup = Subgroup {
        id: format!("concept-{}", short_hash(key)),
        kind: SubgroupKind::Concept,
        members: hits.iter().map(|h| h.sample_id.clone()).collect(),
        provenance: Provenance::Concept {
            query: query.clone(),
            gateway: identity,
        },
        cache: Default::default(),
    };
    Ok(ConceptSearchResult { subgroup, hits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{EmbeddingStore, MetricDescriptor, MetricDirection, SampleRecord};
    use crate::gateway::StubGateway;

    fn dataset(rows: &[Vec<f64>], loss: &[f64]) -> Dataset {
        let records = (0..rows.len())
            .map(|i| SampleRecord::new(format!("s{i}"), "x").with_metric("loss", loss[i]))
            .collect();
        Dataset::new(
            "t",
            ".",
            vec![MetricDescriptor::new("loss", MetricDirection::LowerIsBetter)],
            records,
            EmbeddingStore::from_rows(rows).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn hand_values() {
        assert!((cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 1 / sqrt(2)
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.7071067812).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let ds = dataset(&[vec![1.0, 0.0]], &[0.0]);
        assert!(matches!(top_k(&ds, &[0.0, 0.0], 1, None), Err(Error::ZeroVector)));
    }

    #[test]
    fn ties_break_by_id() {
        let ds = dataset(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0]], &[0.0; 3]);
        let hits = top_k(&ds, &[1.0, 0.0], 3, None).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.sample_id.as_str()).collect();
        assert_eq!(ids, ["s0", "s1", "s2"]);
        let hits = top_k(&ds, &[1.0, 0.0], 3, Some(0.5)).unwrap();
        assert_eq!(hits.len(), 2);
    }

    #[test]
    fn concept_search_by_pinned_vector() {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.7, 0.7, 0.0]];
        let ds = dataset(&rows, &[0.1, 0.5, 0.9]);
        let gw = StubGateway::new(3).with_pin("red", rows[0].clone());
        let r = concept_search(&ds, &ConceptQuery::new("red", 2), &gw).unwrap();
        assert_eq!(r.subgroup.members, vec!["s0", "s2"]);
        assert_eq!(r.subgroup.kind, SubgroupKind::Concept);
        assert!((r.hits[0].similarity - 1.0).abs() < 1e-12);
        match &r.subgroup.provenance {
            Provenance::Concept { query, gateway } => {
                assert_eq!(query.text, "red");
                assert_eq!(gateway, gw.identity());
            }
            other => panic!("unexpected provenance {other:?}"),
        }

        let mut q = ConceptQuery::new("red", 3);
        q.min_similarity = Some(1.0 + 1e-9);
        assert!(q.validate().is_err());
        q.min_similarity = Some(1.0);
        let r = concept_search(&ds, &q, &gw).unwrap();
        assert_eq!(r.subgroup.members, vec!["s0"]);

        let mut q = ConceptQuery::new("red", 3);
        q.metric_filter = Some(MetricFilter {
            metric: "loss".into(),
            range: [0.5, 1.0],
        });
        let r = concept_search(&ds, &q, &gw).unwrap();
        assert_eq!(r.subgroup.members, vec!["s2", "s1"]);
    }

    #[test]
    fn unattainable_threshold_gives_empty_subgroup() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let ds = dataset(&rows, &[0.0, 0.0]);
        let gw = StubGateway::new(2).with_pin("q", vec![-1.0, -1.0]);
        let mut q = ConceptQuery::new("q", 2);
        q.min_similarity = Some(0.5);
        let r = concept_search(&ds, &q, &gw).unwrap();
        assert!(r.subgroup.members.is_empty());
        assert!(r.hits.is_empty());
    }
}
