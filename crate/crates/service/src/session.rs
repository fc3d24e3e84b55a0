//! The analyst session: settings, the active clustering and the inspection history.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use vibe_core::clustering::ClusteringConfig;
use vibe_core::projection::{ProjectionMethod, ProjectionParams};
use vibe_core::Dataset;

use crate::error::ApiError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Settings {
    /// Metric shown in the overview; `None` means the first declared metric.
    #[serde(default)]
    pub selected_metric: Option<String>,
    /// Flips the colour scale relative to the metric direction.
    #[serde(default)]
    pub invert_colors: bool,
    #[serde(default)]
    pub metric_range: Option<[f64; 2]>,
    #[serde(default)]
    pub similarity_threshold: Option<f64>,
}

impl Settings {
    pub fn validate(&self, dataset: &Dataset) -> Result<(), ApiError> {
        if let Some(m) = &self.selected_metric {
            dataset.descriptor(m)?;
        }
        if let Some([lo, hi]) = self.metric_range {
            if !(lo <= hi) {
                return Err(ApiError::bad_request(format!("metric range [{lo}, {hi}] is inverted")));
            }
        }
        if let Some(t) = self.similarity_threshold {
            if !(-1.0..=1.0).contains(&t) {
                return Err(ApiError::bad_request(format!("similarity threshold {t} outside [-1, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ProjectionRef {
    pub method: ProjectionMethod,
    pub params: ProjectionParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct HistoryEntry {
    pub subgroup_id: String,
    /// RFC 3339 timestamp.
    pub at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Inspected { subgroup_id: String, at: String },
    SettingsChanged { settings: Settings },
    ClusteringActivated { config: ClusteringConfig, subgroup_ids: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Session {
    pub id: String,
    pub dataset: String,
    pub projection: ProjectionRef,
    #[serde(default)]
    pub active_clustering: Option<ClusteringConfig>,
    /// Ids of the subgroups produced by the active clustering, in cluster order.
    #[serde(default)]
    pub active_clusters: Vec<String>,
    #[serde(default)]
    pub settings: Settings,
    /// Append-only.
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
    #[serde(default)]
    pub log: Vec<SessionEvent>,
}

impl Session {
    pub fn new(id: impl Into<String>, dataset: impl Into<String>, projection: ProjectionRef) -> Self {
        Self {
            id: id.into(),
            dataset: dataset.into(),
            projection,
            active_clustering: None,
            active_clusters: Vec::new(),
            settings: Settings::default(),
            history: Vec::new(),
            log: Vec::new(),
        }
    }

    /// Applies an event and records it in the log.
    pub fn apply(&mut self, event: SessionEvent) {
        match &event {
            SessionEvent::Inspected { subgroup_id, at } => self.history.push(HistoryEntry {
                subgroup_id: subgroup_id.clone(),
                at: at.clone(),
            }),
            SessionEvent::SettingsChanged { settings } => self.settings = settings.clone(),
            SessionEvent::ClusteringActivated { config, subgroup_ids } => {
                self.active_clustering = Some(config.clone());
                self.active_clusters = subgroup_ids.clone();
            }
        }
        self.log.push(event);
    }

    /// Rebuilds a session from its event log.
    pub fn replay(
        id: impl Into<String>,
        dataset: impl Into<String>,
        projection: ProjectionRef,
        events: impl IntoIterator<Item = SessionEvent>,
    ) -> Self {
        let mut s = Self::new(id, dataset, projection);
        for e in events {
            s.apply(e);
        }
        s
    }
}
