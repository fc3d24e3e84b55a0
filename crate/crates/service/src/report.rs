//! Headless cluster report: the ranked cluster table plus each listed cluster compared
//! against the whole dataset, as Markdown and JSON.

use std::fmt::Write;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use vibe_core::clustering::ClusteringConfig;
use vibe_core::stats::{compare_subgroups, CompareOptions, IntervalEstimate, Verdict, DATASET_GROUP};
use vibe_core::MetricDirection;

use crate::error::ApiError;
use crate::model::{ClusterRow, ClustersQuery};
use crate::state::AppState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ClusterComparison {
    pub subgroup_id: String,
    pub verdict: Option<Verdict>,
    pub explanation: Option<String>,
    pub subgroup_interval: Option<IntervalEstimate>,
    pub dataset_interval: Option<IntervalEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Report {
    pub dataset: String,
    pub metric: String,
    pub direction: MetricDirection,
    pub dataset_mean: f64,
    pub config: ClusteringConfig,
    pub config_hash: String,
    pub total_clusters: usize,
    /// The `top` worst clusters, worst first.
    pub clusters: Vec<ClusterRow>,
    pub comparisons: Vec<ClusterComparison>,
}

pub struct ReportOptions {
    pub metric: Option<String>,
    pub top: usize,
    pub config: ClusteringConfig,
    pub summarize: bool,
    pub compare: CompareOptions,
}

pub fn build_report(state: &AppState, options: &ReportOptions) -> Result<Report, ApiError> {
    let list = state.clusters(
        &options.config,
        &ClustersQuery {
            metric: options.metric.clone(),
            representatives: Some(3),
            summarize: options.summarize,
            run_async: false,
        },
    )?;
    let metric = list.metric.clone();
    let values = state.dataset.metric_vector(&metric)?;
    let total_clusters = list.clusters.len();
    let clusters: Vec<ClusterRow> = list.clusters.into_iter().take(options.top).collect();
    let compare = CompareOptions {
        metrics: Some(vec![metric.clone()]),
        ..options.compare.clone()
    };
    let mut comparisons = Vec::with_capacity(clusters.len());
    for row in &clusters {
        let stored = state
            .store
            .read()
            .map_err(|_| ApiError::internal("store lock poisoned"))?
            .subgroup(&row.id)
            .map(|p| p.subgroup.clone())
            .ok_or_else(|| ApiError::internal(format!("cluster {} was not persisted", row.id)))?;
        let report = compare_subgroups(&[&stored], &state.dataset, &compare)?;
        let m = &report.per_metric[&metric];
        let verdict = m.verdicts.iter().find(|v| v.left == row.id && v.right == DATASET_GROUP);
        comparisons.push(ClusterComparison {
            subgroup_id: row.id.clone(),
            verdict: verdict.map(|v| v.verdict),
            explanation: verdict.map(|v| v.explanation.clone()),
            subgroup_interval: m.subgroups.first().and_then(|g| g.interval.clone()),
            dataset_interval: m.dataset.interval.clone(),
        });
    }
    Ok(Report {
        dataset: state.dataset.name().to_string(),
        direction: state.dataset.descriptor(&metric)?.direction,
        dataset_mean: values.iter().sum::<f64>() / values.len() as f64,
        metric,
        config: list.config,
        config_hash: list.config_hash,
        total_clusters,
        clusters,
        comparisons,
    })
}

fn cell(text: &str) -> String {
    text.replace('|', "\\|").replace('\n', " ")
}

fn fmt_mean(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn fmt_interval(i: &Option<IntervalEstimate>) -> String {
    match i {
        Some(i) => format!("{:.4} [{:.4}, {:.4}]", i.mean, i.lo, i.hi),
        None => "unavailable".into(),
    }
}

pub fn render_markdown(report: &Report) -> String {
    let direction = match report.direction {
        MetricDirection::LowerIsBetter => "lower is better",
        MetricDirection::HigherIsBetter => "higher is better",
    };
    let mut out = String::new();
    let _ = writeln!(out, "# Cluster report: {}\n", report.dataset);
    let _ = writeln!(
        out,
        "Metric `{}` ({direction}); dataset mean {:.4}. Showing {} of {} clusters (config `{}`), worst first.\n",
        report.metric,
        report.dataset_mean,
        report.clusters.len(),
        report.total_clusters,
        report.config_hash
    );
    let _ = writeln!(out, "| Rank | Cluster | Size | Mean {} | Representatives | Summary |", report.metric);
    let _ = writeln!(out, "|---:|---|---:|---:|---|---|");
    for c in &report.clusters {
        let reps: Vec<&str> = c.representatives.iter().map(|r| r.id.as_str()).collect();
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            c.rank,
            c.id,
            c.size,
            fmt_mean(c.mean_metric),
            reps.join(", "),
            cell(c.summary.as_deref().unwrap_or(""))
        );
    }
    let _ = writeln!(out, "\n## Compared with the dataset\n");
    let _ = writeln!(out, "| Cluster | Cluster mean [CI] | Dataset mean [CI] | Verdict |");
    let _ = writeln!(out, "|---|---|---|---|");
    for c in &report.comparisons {
        let verdict = match c.verdict {
            Some(Verdict::Significant) => "significant",
            Some(Verdict::Inconclusive) => "inconclusive",
            None => "unavailable",
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {verdict} |",
            c.subgroup_id,
            fmt_interval(&c.subgroup_interval),
            fmt_interval(&c.dataset_interval)
        );
    }
    out
}
