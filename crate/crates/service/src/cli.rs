//! The `vibe` command line.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use vibe_core::clustering::{ClusteringConfig, ClusteringSpace, DEFAULT_K, DEFAULT_SEED};
use vibe_core::dataset::{validate_dataset, write_samples, FindingStatus, ManifestFile};
use vibe_core::fixtures::{planted_aggressor, tiny, write_with_assets, PlantedConfig};
use vibe_core::gateway::ProviderManifest;
use vibe_core::projection::{project, ProjectionMethod, ProjectionParams};
use vibe_core::prompt::PromptBundle;
use vibe_core::stats::CompareOptions;
use vibe_core::{Dataset, Subgroup};

use crate::report::{build_report, render_markdown, ReportOptions};
use crate::state::{default_store_path, projection_ref, AppState, ServiceConfig};
use crate::store::Store;

#[derive(Debug, Parser)]
#[command(name = "vibe", version, about = "Semantic subgroup analysis of model evaluation runs")]
pub struct Cli {
    /// Directory that relative manifest paths are resolved against.
    #[arg(long, global = true, env = "VIBE_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an evaluation run and create its store.
    Ingest(IngestArgs),
    /// Caption every sample that has no caption yet and rewrite the samples file.
    PrecomputeCaptions(CaptionArgs),
    /// Cluster a run and write one JSON file per cluster.
    Cluster(ClusterArgs),
    /// Render the ranked cluster table and dataset comparisons as Markdown and JSON.
    Report(ReportArgs),
    /// Serve the /v1 API.
    Serve(ServeArgs),
    /// Write a synthetic evaluation run with placeholder assets and a stub provider manifest.
    SynthFixture(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub manifest: PathBuf,
    /// Store file; defaults to vibe-store.json next to the manifest.
    #[arg(long, env = "VIBE_STORE")]
    pub store: Option<PathBuf>,
    /// Print the validation report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
#[group(id = "gateway", required = true, multiple = false)]
pub struct ProviderArgs {
    /// Use the deterministic offline stub.
    #[arg(long)]
    pub stub: bool,
    /// Provider manifest (JSON).
    #[arg(long, env = "VIBE_PROVIDER")]
    pub provider: Option<PathBuf>,
}

impl ProviderArgs {
    fn manifest(&self) -> anyhow::Result<ProviderManifest> {
        match (&self.provider, self.stub) {
            (Some(p), false) => Ok(ProviderManifest::load(p)?),
            _ => Ok(ProviderManifest::stub()),
        }
    }
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    pub manifest: PathBuf,
    #[command(flatten)]
    pub gateway: ProviderArgs,
    /// Recaption samples that already have a caption.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Kmeans,
    Dbscan,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpaceArg {
    Full,
    Projected,
}

#[derive(Debug, Args)]
pub struct ClusteringArgs {
    #[arg(long, value_enum, default_value = "kmeans")]
    pub method: MethodArg,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long, default_value_t = 5)]
    pub min_pts: usize,
    /// Cluster the full embeddings or the 2-D PCA layout.
    #[arg(long, value_enum, default_value = "full")]
    pub space: SpaceArg,
}

impl ClusteringArgs {
    fn config(&self) -> ClusteringConfig {
        let config = match self.method {
            MethodArg::Kmeans => ClusteringConfig::kmeans(self.k),
            MethodArg::Dbscan => ClusteringConfig::dbscan(self.eps, self.min_pts),
        };
        config.with_seed(self.seed).with_space(match self.space {
            SpaceArg::Full => ClusteringSpace::FullDim,
            SpaceArg::Projected => ClusteringSpace::Projected2d,
        })
    }
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    pub manifest: PathBuf,
    #[command(flatten)]
    pub clustering: ClusteringArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[command(flatten)]
    pub clustering: ClusteringArgs,
    /// Provider manifest used for short summaries; without it summaries are left empty.
    #[arg(long, env = "VIBE_PROVIDER")]
    pub provider: Option<PathBuf>,
    /// Generate short cluster summaries with the stub gateway.
    #[arg(long, conflicts_with = "provider")]
    pub stub: bool,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Write report.md and report.json here instead of printing Markdown.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProjectionArg {
    Pca,
    NeighborEmbedding,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub manifest: PathBuf,
    #[arg(long, env = "VIBE_STORE")]
    pub store: Option<PathBuf>,
    /// Provider manifest; the stub is used when absent.
    #[arg(long, env = "VIBE_PROVIDER")]
    pub provider: Option<PathBuf>,
    /// Prompt template bundle (TOML).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, env = "VIBE_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Background job workers.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    #[arg(long, value_enum, default_value = "pca")]
    pub projection: ProjectionArg,
    /// Static front-end build served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FixtureKind {
    /// 1,000 samples with a planted failure concept.
    Planted,
    /// 8 samples in 4 dimensions.
    Tiny,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "planted")]
    pub kind: FixtureKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Generator seed (planted fixture only).
    #[arg(long)]
    pub seed: Option<u64>,
}

fn resolve(root: &Option<PathBuf>, path: &Path) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> anyhow::Result<i32> {
    let root = cli.data_root.clone();
    match cli.command {
        Command::Ingest(a) => ingest(&resolve(&root, &a.manifest), a.store.as_deref(), a.json),
        Command::PrecomputeCaptions(a) => precompute_captions(&resolve(&root, &a.manifest), &a.gateway, a.force),
        Command::Cluster(a) => cluster(&resolve(&root, &a.manifest), &a.clustering.config(), &a.out),
        Command::Report(a) => report(&resolve(&root, &a.manifest), &a),
        Command::Serve(a) => serve(&resolve(&root, &a.manifest), a),
        Command::SynthFixture(a) => synth_fixture(a),
    }
}

fn ingest(manifest: &Path, store: Option<&Path>, json: bool) -> anyhow::Result<i32> {
    let ds = Dataset::ingest_manifest(manifest)?;
    let report = validate_dataset(&ds);
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{}: {} samples, {}-d embeddings", ds.name(), ds.len(), ds.dim());
        for f in &report.findings {
            let tag = match f.status {
                FindingStatus::Pass => "ok",
                FindingStatus::Info => "info",
                FindingStatus::Fail => "FAIL",
            };
            println!("  [{tag}] {}", f.message);
        }
    }
    if !report.passed() {
        eprintln!("validation failed; no store written");
        return Ok(1);
    }
    let path = store.map(Path::to_path_buf).unwrap_or_else(|| default_store_path(manifest));
    let projection = project(&ds, ProjectionMethod::Pca, &ProjectionParams::default())?;
    let store = Store::open(&path, ds.name(), projection_ref(&projection))?;
    if !json {
        println!("store: {}", store.path().unwrap_or(&path).display());
    }
    Ok(0)
}

fn precompute_captions(manifest: &Path, gateway: &ProviderArgs, force: bool) -> anyhow::Result<i32> {
    let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let file: ManifestFile = serde_json::from_str(&text)?;
    let ds = Dataset::ingest_manifest(manifest)?;
    let asset_root = ds.manifest().asset_root.clone();
    let samples_path = asset_root.join(&file.samples_file);
    let gw = gateway.manifest()?.build(Some(&ds))?;
    let mut records = ds.records().to_vec();
    let mut written = 0;
    for r in records.iter_mut() {
        if !force && r.caption.as_deref().is_some_and(|c| !c.is_empty()) {
            continue;
        }
        let caption = gw
            .caption_image(&asset_root.join(&r.input_asset))
            .with_context(|| format!("captioning {}", r.id))?;
        r.caption = Some(caption);
        written += 1;
    }
    if written > 0 {
        let tmp = samples_path.with_extension("jsonl.tmp");
        write_samples(&tmp, &records)?;
        fs::rename(&tmp, &samples_path)?;
    }
    println!("captioned {written} of {} samples", records.len());
    Ok(0)
}

#[derive(Serialize)]
struct ClusterIndexEntry<'a> {
    id: &'a str,
    size: usize,
    file: String,
}

#[derive(Serialize)]
struct ClusterIndex<'a> {
    dataset: &'a str,
    config: &'a ClusteringConfig,
    config_hash: String,
    clusters: Vec<ClusterIndexEntry<'a>>,
}

fn cluster(manifest: &Path, config: &ClusteringConfig, out: &Path) -> anyhow::Result<i32> {
    let ds = Dataset::ingest_manifest(manifest)?;
    let projection = match config.space {
        ClusteringSpace::Projected2d => Some(project(&ds, ProjectionMethod::Pca, &ProjectionParams::default())?),
        ClusteringSpace::FullDim => None,
    };
    let groups: Vec<Subgroup> = vibe_core::clustering::cluster(&ds, config, projection.as_ref())?;
    let dir = out.join("subgroups");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut entries = Vec::with_capacity(groups.len());
    for g in &groups {
        let file = format!("subgroups/{}.json", g.id);
        write_json(&out.join(&file), g)?;
        entries.push(ClusterIndexEntry {
            id: &g.id,
            size: g.len(),
            file,
        });
    }
    write_json(
        &out.join("clustering.json"),
        &ClusterIndex {
            dataset: ds.name(),
            config,
            config_hash: config.config_hash(),
            clusters: entries,
        },
    )?;
    println!("{} clusters written to {}", groups.len(), out.display());
    Ok(0)
}

fn report(manifest: &Path, a: &ReportArgs) -> anyhow::Result<i32> {
    let ds = Dataset::ingest_manifest(manifest)?;
    let provider = match &a.provider {
        Some(p) => ProviderManifest::load(p)?,
        None => ProviderManifest::stub(),
    };
    let gateway = provider.build(Some(&ds))?;
    let bundle = match &a.prompts {
        Some(p) => PromptBundle::load(p)?,
        None => PromptBundle::default(),
    };
    let state = AppState::in_memory(ds, gateway, bundle)?;
    let report = build_report(
        &state,
        &ReportOptions {
            metric: a.metric.clone(),
            top: a.top,
            config: a.clustering.config(),
            summarize: a.stub || a.provider.is_some(),
            compare: CompareOptions::default(),
        },
    )?;
    let markdown = render_markdown(&report);
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("report.md"), &markdown)?;
            write_json(&dir.join("report.json"), &report)?;
            println!("report written to {}", dir.display());
        }
        None => print!("{markdown}"),
    }
    Ok(0)
}

fn serve(manifest: &Path, a: ServeArgs) -> anyhow::Result<i32> {
    if !manifest.exists() {
        bail!("dataset manifest {} not found; ingest a run first", manifest.display());
    }
    let config = ServiceConfig {
        manifest: manifest.to_path_buf(),
        store: a.store,
        provider: a.provider,
        prompts: a.prompts,
        projection: match a.projection {
            ProjectionArg::Pca => ProjectionMethod::Pca,
            ProjectionArg::NeighborEmbedding => ProjectionMethod::NeighborEmbedding,
        },
        projection_params: ProjectionParams::default(),
        workers: a.workers,
        require_store: true,
    };
    let state = AppState::from_config(&config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(crate::api::serve(state, a.bind, a.ui_dir))?;
    Ok(0)
}

fn synth_fixture(a: SynthArgs) -> anyhow::Result<i32> {
    let (dataset, provider) = match a.kind {
        FixtureKind::Planted => {
            let mut config = PlantedConfig::default();
            if let Some(seed) = a.seed {
                config.seed = seed;
            }
            let f = planted_aggressor(&config)?;
            let provider = f.provider_manifest();
            (f.dataset, provider)
        }
        FixtureKind::Tiny => (tiny(), ProviderManifest::stub()),
    };
    let manifest = write_with_assets(&dataset, &a.out)?;
    write_json(&a.out.join("provider.json"), &provider)?;
    let captioned = dataset.records().iter().filter(|r| r.caption.is_some()).count();
    let summary: BTreeMap<&str, String> = [
        ("manifest", manifest.display().to_string()),
        ("samples", dataset.len().to_string()),
        ("dim", dataset.dim().to_string()),
        ("captioned", captioned.to_string()),
    ]
    .into_iter()
    .collect();
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}
