//! Shared application state and the analysis behind each endpoint. Every method here is
//! blocking; the HTTP layer runs them on the blocking pool.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use anyhow::{bail, Context};
use vibe_core::clustering::{cluster, ClusteringConfig};
use vibe_core::gateway::ProviderManifest;
use vibe_core::hypothesis::{cached_issues, summarize_subgroup, SummaryOptions, DEFAULT_PER_GROUP_N};
use vibe_core::projection::{project, Projection, ProjectionMethod, ProjectionParams};
use vibe_core::prompt::{PromptBundle, DETAIL_SUMMARY_WORDS, TABLE_SUMMARY_WORDS};
use vibe_core::search::{concept_search, ConceptQuery};
use vibe_core::stats::{compare_subgroups, histogram, CompareOptions, ComparisonReport, DEFAULT_BINS};
use vibe_core::subgroup::{
    extremes, mean_metric, neighbor_clusters, rank_subgroups, representatives, CachedExtremes,
    CachedRepresentatives,
};
use vibe_core::{Dataset, Gateway, MetricDirection, Subgroup};

use crate::error::{ApiError, ErrorBody};
use crate::jobs::JobQueue;
use crate::model::*;
use crate::session::{ProjectionRef, Session, SessionEvent, Settings};
use crate::store::{now_rfc3339, PersistedSubgroup, Store};

pub const DEFAULT_STORE_FILE: &str = "vibe-store.json";

pub struct ServiceConfig {
    pub manifest: PathBuf,
    /// Defaults to `vibe-store.json` next to the manifest.
    pub store: Option<PathBuf>,
    /// Provider manifest; `None` selects the deterministic stub.
    pub provider: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub projection: ProjectionMethod,
    pub projection_params: ProjectionParams,
    pub workers: usize,
    /// Refuse to start unless the store was created by `vibe ingest`.
    pub require_store: bool,
}

impl ServiceConfig {
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            store: None,
            provider: None,
            prompts: None,
            projection: ProjectionMethod::Pca,
            projection_params: ProjectionParams::default(),
            workers: 2,
            require_store: false,
        }
    }

    pub fn store_path(&self) -> PathBuf {
        self.store.clone().unwrap_or_else(|| default_store_path(&self.manifest))
    }
}

pub fn default_store_path(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(DEFAULT_STORE_FILE)
}

pub struct AppState {
    pub dataset: Arc<Dataset>,
    pub gateway: Arc<dyn Gateway>,
    pub bundle: PromptBundle,
    pub projection: Projection,
    pub store: RwLock<Store>,
    pub jobs: Arc<JobQueue>,
}

fn error_body(e: ApiError) -> ErrorBody {
    ErrorBody {
        error: e.code.to_string(),
        message: e.message,
    }
}

impl AppState {
    pub fn from_config(config: &ServiceConfig) -> anyhow::Result<Self> {
        let dataset = Dataset::ingest_manifest(&config.manifest)
            .with_context(|| format!("loading dataset {}", config.manifest.display()))?;
        let provider = match &config.provider {
            Some(p) => ProviderManifest::load(p)?,
            None => ProviderManifest::stub(),
        };
        let gateway = provider.build(Some(&dataset))?;
        let bundle = match &config.prompts {
            Some(p) => PromptBundle::load(p)?,
            None => PromptBundle::default(),
        };
        let projection = project(&dataset, config.projection, &config.projection_params)?;
        let path = config.store_path();
        if config.require_store && !path.exists() {
            bail!(
                "store {} not found; run `vibe ingest` on the manifest first",
                path.display()
            );
        }
        let store = Store::open(&path, dataset.name(), projection_ref(&projection))?;
        Ok(Self::assemble(dataset, gateway, bundle, projection, store, config.workers))
    }

    /// State over an in-memory store, for tests and one-shot CLI commands.
    pub fn in_memory(dataset: Dataset, gateway: Arc<dyn Gateway>, bundle: PromptBundle) -> anyhow::Result<Self> {
        let projection = project(&dataset, ProjectionMethod::Pca, &ProjectionParams::default())?;
        let store = Store::in_memory(dataset.name(), projection_ref(&projection));
        Ok(Self::assemble(dataset, gateway, bundle, projection, store, 2))
    }

    pub fn with_store(
        dataset: Dataset,
        gateway: Arc<dyn Gateway>,
        bundle: PromptBundle,
        store_path: &Path,
    ) -> anyhow::Result<Self> {
        let projection = project(&dataset, ProjectionMethod::Pca, &ProjectionParams::default())?;
        let store = Store::open(store_path, dataset.name(), projection_ref(&projection))?;
        Ok(Self::assemble(dataset, gateway, bundle, projection, store, 2))
    }

    fn assemble(
        dataset: Dataset,
        gateway: Arc<dyn Gateway>,
        bundle: PromptBundle,
        projection: Projection,
        store: Store,
        workers: usize,
    ) -> Self {
        Self {
            dataset: Arc::new(dataset),
            gateway,
            bundle,
            projection,
            store: RwLock::new(store),
            jobs: Arc::new(JobQueue::new(workers)),
        }
    }

    /// Runs a mutation under the single writer lock and persists the store.
    fn write<T>(&self, f: impl FnOnce(&mut Store) -> T) -> Result<T, ApiError> {
        let mut store = self.store.write().map_err(|_| ApiError::internal("store lock poisoned"))?;
        let out = f(&mut store);
        store
            .save()
            .map_err(|e| ApiError::internal(format!("persisting store: {e:#}")))?;
        Ok(out)
    }

    fn read<T>(&self, f: impl FnOnce(&Store) -> T) -> Result<T, ApiError> {
        let store = self.store.read().map_err(|_| ApiError::internal("store lock poisoned"))?;
        Ok(f(&store))
    }

    pub fn session(&self) -> Result<Session, ApiError> {
        self.read(|s| s.session().clone())
    }

    fn stored(&self, id: &str) -> Result<PersistedSubgroup, ApiError> {
        self.read(|s| s.subgroup(id).cloned())?
            .ok_or_else(|| ApiError::not_found(format!("unknown subgroup: {id}")))
    }

    /// The requested metric, else the session's selected metric, else the first declared one.
    pub fn resolve_metric(&self, requested: Option<&str>) -> Result<String, ApiError> {
        let name = match requested {
            Some(m) => m.to_string(),
            None => match self.read(|s| s.session().settings.selected_metric.clone())? {
                Some(m) => m,
                None => self
                    .dataset
                    .metric_names()
                    .next()
                    .ok_or_else(|| ApiError::bad_request("dataset declares no metrics"))?
                    .to_string(),
            },
        };
        self.dataset.descriptor(&name)?;
        Ok(name)
    }

    fn sample_ref(&self, id: &str) -> Result<SampleRef, ApiError> {
        let r = self.dataset.record(self.dataset.index_of(id)?);
        Ok(SampleRef {
            id: r.id.clone(),
            input_asset: r.input_asset.clone(),
        })
    }

    fn sample_value(&self, id: &str, metric: &str) -> Result<SampleValue, ApiError> {
        let i = self.dataset.index_of(id)?;
        let r = self.dataset.record(i);
        Ok(SampleValue {
            id: r.id.clone(),
            value: self.dataset.metric_value(i, metric),
            input_asset: r.input_asset.clone(),
            truth_assets: r.truth_assets.clone(),
            prediction_assets: r.prediction_assets.clone(),
            caption: r.caption.clone(),
        })
    }

    fn dataset_mean(&self, metric: &str) -> Result<f64, ApiError> {
        let v = self.dataset.metric_vector(metric)?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    fn performance(&self, metric: &str, mean: Option<f64>, dataset_mean: f64) -> Result<Option<Performance>, ApiError> {
        let direction: MetricDirection = self.dataset.descriptor(metric)?.direction;
        Ok(mean.map(|m| {
            if direction.badness(m) > direction.badness(dataset_mean) {
                Performance::Low
            } else {
                Performance::High
            }
        }))
    }

    /// Cached representatives when they cover `n`, otherwise recomputed and cached.
    fn cached_representatives(&self, sg: &mut Subgroup, n: usize) -> Result<Vec<String>, ApiError> {
        if let Some(c) = &sg.cache.representatives {
            if c.trim_fraction == 0.0 && (c.n >= n || c.ids.len() == sg.len()) {
                return Ok(c.ids.iter().take(n).cloned().collect());
            }
        }
        let ids = representatives(sg, &self.dataset, n, 0.0)?;
        sg.cache.set_representatives(
            CachedRepresentatives {
                n,
                trim_fraction: 0.0,
                ids: ids.clone(),
            },
            true,
        );
        Ok(ids)
    }

    fn short_summary(&self, sg: &mut Subgroup, generate: bool) -> Option<String> {
        if !generate {
            return sg
                .cache
                .summary(TABLE_SUMMARY_WORDS)
                .filter(|c| &c.gateway == self.gateway.identity())
                .map(|c| c.text.clone());
        }
        let options = SummaryOptions {
            max_words: TABLE_SUMMARY_WORDS,
            ..Default::default()
        };
        summarize_subgroup(sg, &self.dataset, self.gateway.as_ref(), &self.bundle, &options).ok()
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            api_version: API_VERSION.into(),
            dataset: self.dataset.name().to_string(),
            samples: self.dataset.len(),
            dim: self.dataset.dim(),
            metrics: self.dataset.manifest().metric_descriptors.clone(),
            gateway: self.gateway.identity().clone(),
        }
    }

    pub fn overview(&self, query: &OverviewQuery) -> Result<Overview, ApiError> {
        let metric = self.resolve_metric(query.metric.as_deref())?;
        let descriptor = self.dataset.descriptor(&metric)?.clone();
        let values = self.dataset.metric_vector(&metric)?;
        let domain = descriptor.display_range.unwrap_or_else(|| data_domain(&values));
        let histogram = histogram(&values, query.bins.unwrap_or(DEFAULT_BINS), domain)?;
        let points = self
            .dataset
            .records()
            .iter()
            .zip(&self.projection.coords)
            .zip(&values)
            .map(|((r, [x, y]), v)| OverviewPoint {
                id: r.id.clone(),
                x: *x,
                y: *y,
                value: *v,
                input_asset: r.input_asset.clone(),
            })
            .collect();
        Ok(Overview {
            metric: descriptor,
            histogram,
            projection: ProjectionSummary {
                method: self.projection.method,
                params: self.projection.params.clone(),
                explained_variance_ratio: self.projection.explained_variance_ratio,
            },
            points,
            settings: self.read(|s| s.session().settings.clone())?,
        })
    }

    pub fn clusters(&self, config: &ClusteringConfig, query: &ClustersQuery) -> Result<ClusterList, ApiError> {
        let metric = self.resolve_metric(query.metric.as_deref())?;
        let groups = cluster(&self.dataset, config, Some(&self.projection))?;
        let ranked = rank_subgroups(&groups, &self.dataset, &metric)?;
        let ids: Vec<String> = groups.iter().map(|g| g.id.clone()).collect();
        let mut stored = self.write(|store| {
            let stored: Vec<Subgroup> = groups.into_iter().map(|g| store.insert(g).subgroup.clone()).collect();
            let session = store.session();
            if session.active_clustering.as_ref() != Some(config) || session.active_clusters != ids {
                store.record(SessionEvent::ClusteringActivated {
                    config: config.clone(),
                    subgroup_ids: ids.clone(),
                });
            }
            stored
        })?;
        let n = query.representatives.unwrap_or(DEFAULT_REPRESENTATIVES);
        let mut rows = Vec::with_capacity(ranked.len());
        for (rank, r) in ranked.iter().enumerate() {
            let sg = stored
                .iter_mut()
                .find(|s| s.id == r.id)
                .ok_or_else(|| ApiError::internal("ranked id missing from clustering"))?;
            let reps = self.cached_representatives(sg, n)?;
            let summary = self.short_summary(sg, query.summarize);
            let top_issues = sg
                .cache
                .issues
                .as_ref()
                .filter(|c| c.metric == metric && &c.gateway == self.gateway.identity())
                .map(|c| {
                    c.issues
                        .iter()
                        .take(TOP_ISSUES_IN_TABLE)
                        .map(|i| IssueBrief {
                            text: i.text.clone(),
                            confidence: i.confidence,
                        })
                        .collect()
                })
                .unwrap_or_default();
            rows.push(ClusterRow {
                rank: rank + 1,
                id: r.id.clone(),
                size: r.size,
                mean_metric: r.mean_metric,
                representatives: reps.iter().map(|id| self.sample_ref(id)).collect::<Result<_, _>>()?,
                summary,
                top_issues,
            });
        }
        self.write(|store| {
            for sg in &stored {
                store.update_cache(sg);
            }
        })?;
        Ok(ClusterList {
            config: config.clone(),
            config_hash: config.config_hash(),
            metric,
            clusters: rows,
        })
    }

    pub fn detail(&self, id: &str, query: &DetailQuery) -> Result<SubgroupDetail, ApiError> {
        let persisted = self.stored(id)?;
        let mut sg = persisted.subgroup;
        let metric = self.resolve_metric(query.metric.as_deref())?;
        let mean = mean_metric(&sg, &self.dataset, &metric)?;
        let dataset_mean = self.dataset_mean(&metric)?;
        let n = query.n.unwrap_or(DEFAULT_EXTREMES);

        let (reps, summary, summary_error, extremes_view, issues, issues_error) = if sg.is_empty() {
            let empty = ErrorBody {
                error: "empty_subgroup".into(),
                message: format!("subgroup {id} has no members"),
            };
            (
                Vec::new(),
                None,
                Some(empty.clone()),
                Extremes {
                    worst: Vec::new(),
                    best: Vec::new(),
                },
                Vec::new(),
                Some(empty),
            )
        } else {
            let reps = self.cached_representatives(&mut sg, query.representatives.unwrap_or(DEFAULT_REPRESENTATIVES))?;
            let options = SummaryOptions {
                max_words: DETAIL_SUMMARY_WORDS,
                ..Default::default()
            };
            let (summary, summary_error) =
                match summarize_subgroup(&mut sg, &self.dataset, self.gateway.as_ref(), &self.bundle, &options) {
                    Ok(s) => (Some(s), None),
                    Err(e) => (None, Some(error_body(e.into()))),
                };
            let (worst, best) = extremes(&sg, &self.dataset, &metric, n)?;
            sg.cache.set_extremes(
                CachedExtremes {
                    metric: metric.clone(),
                    n,
                    worst: worst.clone(),
                    best: best.clone(),
                },
                true,
            );
            let extremes_view = Extremes {
                worst: worst.iter().map(|m| self.sample_value(m, &metric)).collect::<Result<_, _>>()?,
                best: best.iter().map(|m| self.sample_value(m, &metric)).collect::<Result<_, _>>()?,
            };
            let propose = query.issues.unwrap_or(true);
            let cached = sg
                .cache
                .issues
                .as_ref()
                .filter(|c| c.metric == metric && &c.gateway == self.gateway.identity())
                .map(|c| c.issues.clone());
            let (issues, issues_error) = match (cached, propose) {
                (Some(i), _) => (i, None),
                (None, false) => (Vec::new(), None),
                (None, true) => match cached_issues(
                    &mut sg,
                    &self.dataset,
                    &metric,
                    self.gateway.as_ref(),
                    &self.bundle,
                    DEFAULT_PER_GROUP_N,
                    false,
                ) {
                    Ok(i) => (i, None),
                    Err(e) => (Vec::new(), Some(error_body(e.into()))),
                },
            };
            (reps, summary, summary_error, extremes_view, issues, issues_error)
        };

        let active = self.read(|s| {
            s.session()
                .active_clusters
                .iter()
                .filter_map(|c| s.subgroup(c).map(|p| p.subgroup.clone()))
                .collect::<Vec<_>>()
        })?;
        let near = neighbor_clusters(&sg, &active, &self.dataset, query.neighbors.unwrap_or(DEFAULT_NEIGHBORS))?;
        let mut touched = Vec::new();
        let mut neighbors = Vec::with_capacity(near.len());
        for nc in near {
            let Some(mut other) = active.iter().find(|c| c.id == nc.subgroup_id).cloned() else {
                continue;
            };
            let m = mean_metric(&other, &self.dataset, &metric)?;
            let rep = self.cached_representatives(&mut other, 1)?;
            let summary = self.short_summary(&mut other, true);
            neighbors.push(NeighborCard {
                subgroup_id: other.id.clone(),
                centroid_similarity: nc.centroid_similarity,
                size: other.len(),
                mean_metric: m,
                performance: self.performance(&metric, m, dataset_mean)?,
                representative: rep.first().map(|r| self.sample_ref(r)).transpose()?,
                summary,
            });
            touched.push(other);
        }

        let at = now_rfc3339();
        self.write(|store| {
            store.update_cache(&sg);
            for t in &touched {
                store.update_cache(t);
            }
            if store.session().history.last().map(|h| h.subgroup_id.as_str()) != Some(id) {
                store.record(SessionEvent::Inspected {
                    subgroup_id: id.to_string(),
                    at,
                });
            }
        })?;

        Ok(SubgroupDetail {
            id: sg.id.clone(),
            kind: sg.kind,
            provenance: sg.provenance.clone(),
            created_at: persisted.created_at,
            size: sg.len(),
            members: sg.members.clone(),
            performance: self.performance(&metric, mean, dataset_mean)?,
            metric,
            mean_metric: mean,
            dataset_mean,
            representatives: reps.iter().map(|r| self.sample_ref(r)).collect::<Result<_, _>>()?,
            summary,
            summary_error,
            extremes: extremes_view,
            issues,
            issues_error,
            neighbors,
        })
    }

    pub fn list_subgroups(&self) -> Result<SubgroupList, ApiError> {
        self.read(|s| SubgroupList {
            subgroups: s.subgroups().map(brief).collect(),
        })
    }

    pub fn search(&self, query: &ConceptQuery) -> Result<SearchResponse, ApiError> {
        let found = concept_search(&self.dataset, query, self.gateway.as_ref())?;
        let subgroup = self.persist_and_log(found.subgroup)?;
        Ok(SearchResponse {
            subgroup,
            hits: found.hits,
        })
    }

    pub fn create_custom(&self, request: &CustomSubgroupRequest) -> Result<SubgroupBrief, ApiError> {
        let sg = Subgroup::custom(request.members.iter().cloned(), request.description.clone());
        if sg.is_empty() {
            return Err(ApiError::bad_request("a custom subgroup needs at least one member"));
        }
        sg.validate(&self.dataset)?;
        self.persist_and_log(sg)
    }

    fn persist_and_log(&self, sg: Subgroup) -> Result<SubgroupBrief, ApiError> {
        let at = now_rfc3339();
        self.write(|store| {
            let id = sg.id.clone();
            let b = brief(store.insert(sg));
            store.record(SessionEvent::Inspected { subgroup_id: id, at });
            b
        })
    }

    pub fn compare(&self, request: &CompareRequest) -> Result<ComparisonReport, ApiError> {
        if request.subgroup_ids.is_empty() || request.subgroup_ids.len() > 2 {
            return Err(ApiError::bad_request("compare takes one or two subgroup ids"));
        }
        let groups = request
            .subgroup_ids
            .iter()
            .map(|id| self.stored(id).map(|p| p.subgroup))
            .collect::<Result<Vec<_>, _>>()?;
        let defaults = CompareOptions::default();
        let options = CompareOptions {
            exclude_shared: request.exclude_shared,
            bins: request.bins.unwrap_or(defaults.bins),
            resamples: request.resamples.unwrap_or(defaults.resamples),
            alpha: request.alpha.unwrap_or(defaults.alpha),
            seed: request.seed.unwrap_or(defaults.seed),
            metrics: request.metrics.clone(),
        };
        let refs: Vec<&Subgroup> = groups.iter().collect();
        Ok(compare_subgroups(&refs, &self.dataset, &options)?)
    }

    pub fn history(&self, query: &HistoryQuery) -> Result<History, ApiError> {
        let metric = self.resolve_metric(query.metric.as_deref())?;
        let dataset_mean = self.dataset_mean(&metric)?;
        let entries = self.read(|s| {
            s.session()
                .history
                .iter()
                .map(|h| (h.clone(), s.subgroup(&h.subgroup_id).map(|p| p.subgroup.clone())))
                .collect::<Vec<_>>()
        })?;
        let mut cards = Vec::with_capacity(entries.len());
        let mut touched: Vec<Subgroup> = Vec::new();
        for (entry, sg) in entries {
            let mut sg = sg.ok_or_else(|| {
                ApiError::internal(format!("history references missing subgroup {}", entry.subgroup_id))
            })?;
            let mean = mean_metric(&sg, &self.dataset, &metric)?;
            let rep = if sg.is_empty() {
                None
            } else {
                self.cached_representatives(&mut sg, 1)?.first().cloned()
            };
            cards.push(HistoryCard {
                subgroup_id: sg.id.clone(),
                kind: sg.kind,
                at: entry.at,
                size: sg.len(),
                representative: rep.map(|r| self.sample_ref(&r)).transpose()?,
                short_summary: self.short_summary(&mut sg, true),
                mean_metric: mean,
                performance: self.performance(&metric, mean, dataset_mean)?,
            });
            touched.push(sg);
        }
        self.write(|store| {
            for t in &touched {
                store.update_cache(t);
            }
        })?;
        Ok(History { metric, cards })
    }

    pub fn settings(&self) -> Result<Settings, ApiError> {
        self.read(|s| s.session().settings.clone())
    }

    pub fn update_settings(&self, settings: Settings) -> Result<Settings, ApiError> {
        settings.validate(&self.dataset)?;
        self.write(|store| {
            if store.session().settings != settings {
                store.record(SessionEvent::SettingsChanged {
                    settings: settings.clone(),
                });
            }
        })?;
        Ok(settings)
    }
}

fn brief(p: &PersistedSubgroup) -> SubgroupBrief {
    SubgroupBrief {
        id: p.subgroup.id.clone(),
        kind: p.subgroup.kind,
        size: p.subgroup.len(),
        created_at: p.created_at.clone(),
    }
}

pub fn projection_ref(p: &Projection) -> ProjectionRef {
    ProjectionRef {
        method: p.method,
        params: p.params.clone(),
    }
}

fn data_domain(values: &[f64]) -> [f64; 2] {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        [0.0, 1.0]
    } else if lo == hi {
        [lo - 0.5, hi + 0.5]
    } else {
        [lo, hi]
    }
}
