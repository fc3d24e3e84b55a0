//! Request and response bodies of the /v1 API.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use vibe_core::clustering::ClusteringConfig;
use vibe_core::gateway::GatewayIdentity;
use vibe_core::hypothesis::CandidateIssue;
use vibe_core::projection::{ProjectionMethod, ProjectionParams};
use vibe_core::search::SearchHit;
use vibe_core::stats::Histogram;
use vibe_core::subgroup::Provenance;
use vibe_core::{MetricDescriptor, SubgroupKind};

use crate::error::ErrorBody;
use crate::session::Settings;

pub const API_VERSION: &str = "v1";
pub const DEFAULT_REPRESENTATIVES: usize = 5;
pub const DEFAULT_EXTREMES: usize = 5;
pub const DEFAULT_NEIGHBORS: usize = 5;
pub const TOP_ISSUES_IN_TABLE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Health {
    pub status: String,
    pub api_version: String,
    pub dataset: String,
    pub samples: usize,
    pub dim: usize,
    pub metrics: Vec<MetricDescriptor>,
    pub gateway: GatewayIdentity,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct OverviewQuery {
    pub metric: Option<String>,
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ProjectionSummary {
    pub method: ProjectionMethod,
    pub params: ProjectionParams,
    pub explained_variance_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct OverviewPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub input_asset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Overview {
    pub metric: MetricDescriptor,
    pub histogram: Histogram,
    pub projection: ProjectionSummary,
    /// One point per sample, in sample order.
    pub points: Vec<OverviewPoint>,
    pub settings: Settings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ClustersQuery {
    pub metric: Option<String>,
    pub representatives: Option<usize>,
    /// Generate missing short summaries through the gateway instead of reporting cached ones only.
    #[serde(default)]
    pub summarize: bool,
    /// Run as a background job and return its status.
    #[serde(default, rename = "async")]
    pub run_async: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct SampleRef {
    pub id: String,
    pub input_asset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct IssueBrief {
    pub text: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ClusterRow {
    /// 1 is the worst-performing cluster.
    pub rank: usize,
    pub id: String,
    pub size: usize,
    pub mean_metric: Option<f64>,
    pub representatives: Vec<SampleRef>,
    pub summary: Option<String>,
    pub top_issues: Vec<IssueBrief>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ClusterList {
    pub config: ClusteringConfig,
    pub config_hash: String,
    pub metric: String,
    pub clusters: Vec<ClusterRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DetailQuery {
    pub metric: Option<String>,
    /// Samples per extreme strip.
    pub n: Option<usize>,
    pub representatives: Option<usize>,
    pub neighbors: Option<usize>,
    /// Propose candidate issues when none are cached (default true).
    pub issues: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Performance {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SampleValue {
    pub id: String,
    pub value: f64,
    pub input_asset: String,
    pub truth_assets: Vec<String>,
    pub prediction_assets: Vec<String>,
    pub caption: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Extremes {
    pub worst: Vec<SampleValue>,
    pub best: Vec<SampleValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct NeighborCard {
    pub subgroup_id: String,
    pub centroid_similarity: f64,
    pub size: usize,
    pub mean_metric: Option<f64>,
    pub performance: Option<Performance>,
    pub representative: Option<SampleRef>,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SubgroupDetail {
    pub id: String,
    pub kind: SubgroupKind,
    pub provenance: Provenance,
    pub created_at: String,
    pub size: usize,
    pub members: Vec<String>,
    pub metric: String,
    pub mean_metric: Option<f64>,
    pub dataset_mean: f64,
    /// Relative to the dataset mean; `None` for an empty subgroup.
    pub performance: Option<Performance>,
    pub representatives: Vec<SampleRef>,
    pub summary: Option<String>,
    pub summary_error: Option<ErrorBody>,
    pub extremes: Extremes,
    pub issues: Vec<CandidateIssue>,
    pub issues_error: Option<ErrorBody>,
    pub neighbors: Vec<NeighborCard>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SubgroupBrief {
    pub id: String,
    pub kind: SubgroupKind,
    pub size: usize,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SubgroupList {
    pub subgroups: Vec<SubgroupBrief>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CustomSubgroupRequest {
    pub members: Vec<String>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SearchResponse {
    pub subgroup: SubgroupBrief,
    pub hits: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CompareRequest {
    pub subgroup_ids: Vec<String>,
    #[serde(default)]
    pub exclude_shared: bool,
    #[serde(default)]
    pub bins: Option<usize>,
    #[serde(default)]
    pub metrics: Option<Vec<String>>,
    #[serde(default)]
    pub resamples: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HistoryQuery {
    pub metric: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HistoryCard {
    pub subgroup_id: String,
    pub kind: SubgroupKind,
    pub at: String,
    pub size: usize,
    pub representative: Option<SampleRef>,
    pub short_summary: Option<String>,
    pub mean_metric: Option<f64>,
    pub performance: Option<Performance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct History {
    pub metric: String,
    /// Oldest first.
    pub cards: Vec<HistoryCard>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SchemaIndex {
    pub names: Vec<String>,
}
