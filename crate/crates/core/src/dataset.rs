//! Evaluation-run data model: samples, metric descriptors, and the embedding store.
//!
//! A run is described by a JSON manifest that points at two sibling files:
//!
//! * `samples_file`: newline-delimited JSON, one [`SampleRecord`] per line.
//! * `embeddings_file`: an 8-byte header of two little-endian `u32`s `(N, dim)` followed
//!   by `N * dim` little-endian `f32`s in row-major order.
//!
//! Both paths resolve relative to `asset_root`, which itself resolves relative to the
//! manifest's directory when it is not absolute.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EMBEDDING_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum MetricDirection {
    LowerIsBetter,
    HigherIsBetter,
}

impl MetricDirection {
    /// Maps a raw value onto a scale where larger always means worse.
    pub fn badness(self, value: f64) -> f64 {
        match self {
            MetricDirection::LowerIsBetter => value,
            MetricDirection::HigherIsBetter => -value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MetricDescriptor {
    pub name: String,
    pub direction: MetricDirection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_range: Option<[f64; 2]>,
}

impl MetricDescriptor {
    pub fn new(name: impl Into<String>, direction: MetricDirection) -> Self {
        Self {
            name: name.into(),
            direction,
            display_range: None,
        }
    }

    pub fn with_range(mut self, min: f64, max: f64) -> Self {
        self.display_range = Some([min, max]);
        self
    }
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SampleRecord {
    pub id: String,
    pub input_asset: String,
    #[serde(default)]
    pub truth_assets: Vec<String>,
    #[serde(default)]
    pub prediction_assets: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, input_asset: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            input_asset: input_asset.into(),
            truth_assets: Vec::new(),
            prediction_assets: Vec::new(),
            metrics: BTreeMap::new(),
            caption: None,
        }
    }

    pub fn with_metric(mut self, name: impl Into<String>, value: f64) -> Self {
        self.metrics.insert(name.into(), value);
        self
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.caption = Some(caption.into());
        self
    }
}

/// Row-major `N x dim` matrix of joint-embedding vectors with cached Euclidean norms.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl EmbeddingStore {
    /// Builds a store from flat row-major data, rejecting non-finite entries and zero rows.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        let store = Self::from_flat(dim, data)?;
        for row in 0..store.len() {
            store.check_row(row, &format!("row {row}"))?;
        }
        Ok(store)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyInput("embedding rows"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("row {i}"),
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::CountMismatch {
                context: format!("{} values is not a multiple of dim {dim}", data.len()),
            });
        }
        let norms = data
            .chunks_exact(dim)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(Self { dim, data, norms })
    }

    fn check_row(&self, row: usize, label: &str) -> Result<()> {
        if self.row(row).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of {label}")));
        }
        if self.norms[row] <= 0.0 {
            return Err(Error::ZeroNormEmbedding(label.to_string()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Reads the little-endian binary matrix format.
    pub fn read_binary(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut header = [0u8; 8];
        reader
            .read_exact(&mut header)
            .map_err(|_| Error::parse("embeddings header", "file shorter than 8 bytes"))?;
        let rows = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() != rows * dim * 4 {
            return Err(Error::CountMismatch {
                context: format!(
                    "embeddings header declares {rows}x{dim} but payload holds {} floats",
                    bytes.len() / 4
                ),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Self::from_flat(dim, data)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<fs::File>, b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
        write(&mut w, &(self.len() as u32).to_le_bytes())?;
        write(&mut w, &(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            write(&mut w, &(*v as f32).to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DatasetManifest {
    pub name: String,
    pub asset_root: PathBuf,
    pub metric_descriptors: Vec<MetricDescriptor>,
    pub sample_count: usize,
    pub embedding_dim: usize,
}

/// On-disk manifest document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub asset_root: PathBuf,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    pub metrics: Vec<MetricDescriptor>,
    pub samples_file: PathBuf,
    pub embeddings_file: PathBuf,
}

fn default_dim() -> usize {
    DEFAULT_EMBEDDING_DIM
}

/// An ingested evaluation run. Immutable once constructed.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: DatasetManifest,
    records: Vec<SampleRecord>,
    store: EmbeddingStore,
    index: HashMap<String, usize>,
}

impl Dataset {
    /// Assembles a dataset in memory, enforcing every ingest invariant.
    pub fn new(
        name: impl Into<String>,
        asset_root: impl Into<PathBuf>,
        metrics: Vec<MetricDescriptor>,
        records: Vec<SampleRecord>,
        store: EmbeddingStore,
    ) -> Result<Self> {
        let dataset = Self::from_parts_unchecked(name, asset_root, metrics, records, store);
        dataset.enforce()?;
        Ok(dataset)
    }

    /// Assembles a dataset without checking invariants. Intended for tooling that wants to
    /// inspect a defective run through [`Dataset::validate`].
    pub fn from_parts_unchecked(
        name: impl Into<String>,
        asset_root: impl Into<PathBuf>,
        metrics: Vec<MetricDescriptor>,
        records: Vec<SampleRecord>,
        store: EmbeddingStore,
    ) -> Self {
        let index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        Self {
            manifest: DatasetManifest {
                name: name.into(),
                asset_root: asset_root.into(),
                metric_descriptors: metrics,
                sample_count: records.len(),
                embedding_dim: store.dim(),
            },
            records,
            store,
            index,
        }
    }

    fn enforce(&self) -> Result<()> {
        let mut names = HashSet::new();
        for d in &self.manifest.metric_descriptors {
            if !names.insert(d.name.as_str()) {
                return Err(Error::InvalidMetric {
                    name: d.name.clone(),
                    message: "declared twice".into(),
                });
            }
            if let Some([lo, hi]) = d.display_range {
                if !(lo < hi) {
                    return Err(Error::InvalidMetric {
                        name: d.name.clone(),
                        message: format!("display_range [{lo}, {hi}] must satisfy min < max"),
                    });
                }
            }
        }
        if self.records.len() != self.store.len() {
            return Err(Error::CountMismatch {
                context: format!(
                    "{} sample records but {} embedding rows",
                    self.records.len(),
                    self.store.len()
                ),
            });
        }
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.id.is_empty() {
                return Err(Error::EmptyId(i + 1));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            for (name, value) in &r.metrics {
                if !names.contains(name.as_str()) {
                    return Err(Error::UnknownMetric(format!("{name} (sample {})", r.id)));
                }
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("metric {name} of sample {}", r.id)));
                }
            }
            for d in &self.manifest.metric_descriptors {
                if !r.metrics.contains_key(&d.name) {
                    return Err(Error::parse(
                        "sample record",
                        format!("sample {} lacks a value for metric {}", r.id, d.name),
                    ));
                }
            }
            if !r.truth_assets.is_empty()
                && !r.prediction_assets.is_empty()
                && r.truth_assets.len() != r.prediction_assets.len()
            {
                return Err(Error::CountMismatch {
                    context: format!(
                        "sample {} has {} truth assets but {} prediction assets",
                        r.id,
                        r.truth_assets.len(),
                        r.prediction_assets.len()
                    ),
                });
            }
            self.store.check_row(i, &r.id)?;
        }
        Ok(())
    }

    /// Reads a manifest and the files it references.
    pub fn ingest_manifest(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let file: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::parse("manifest", e))?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let asset_root = if file.asset_root.is_absolute() {
            file.asset_root.clone()
        } else {
            base.join(&file.asset_root)
        };
        let records = read_samples(&asset_root.join(&file.samples_file))?;
        let store = EmbeddingStore::read_binary(&asset_root.join(&file.embeddings_file))?;
        if store.dim() != file.embedding_dim {
            return Err(Error::DimensionMismatch {
                context: "embeddings file".into(),
                expected: file.embedding_dim,
                actual: store.dim(),
            });
        }
        let dataset = Self::new(file.name, asset_root, file.metrics, records, store)?;
        tracing::info!(
            name = %dataset.manifest.name,
            samples = dataset.len(),
            dim = dataset.dim(),
            "ingested dataset"
        );
        Ok(dataset)
    }

    /// Writes manifest, samples and embeddings under `dir`, returning the manifest path.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = ManifestFile {
            name: self.manifest.name.clone(),
            asset_root: PathBuf::from("."),
            embedding_dim: self.dim(),
            metrics: self.manifest.metric_descriptors.clone(),
            samples_file: PathBuf::from("samples.jsonl"),
            embeddings_file: PathBuf::from("embeddings.bin"),
        };
        write_samples(&dir.join(&manifest.samples_file), &self.records)?;
        self.store.write_binary(&dir.join(&manifest.embeddings_file))?;
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse("manifest", e))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Returns a copy with captions replaced for the given sample ids.
    pub fn with_captions(&self, captions: &BTreeMap<String, String>) -> Result<Self> {
        let mut records = self.records.clone();
        for (id, caption) in captions {
            let i = self.index_of(id)?;
            records[i].caption = Some(caption.clone());
        }
        Self::new(
            self.manifest.name.clone(),
            self.manifest.asset_root.clone(),
            self.manifest.metric_descriptors.clone(),
            records,
            self.store.clone(),
        )
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &SampleRecord {
        &self.records[i]
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownSample(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn embedding(&self, id: &str) -> Result<&[f64]> {
        Ok(self.store.row(self.index_of(id)?))
    }

    pub fn caption(&self, id: &str) -> Option<&str> {
        self.index
            .get(id)
            .and_then(|&i| self.records[i].caption.as_deref())
    }

    pub fn descriptor(&self, metric: &str) -> Result<&MetricDescriptor> {
        self.manifest
            .metric_descriptors
            .iter()
            .find(|d| d.name == metric)
            .ok_or_else(|| Error::UnknownMetric(metric.to_string()))
    }

    pub fn metric_names(&self) -> impl Iterator<Item = &str> {
        self.manifest.metric_descriptors.iter().map(|d| d.name.as_str())
    }

    /// Value of `metric` for sample `i`; sample order matches ingest order.
    pub fn metric_value(&self, i: usize, metric: &str) -> f64 {
        self.records[i].metrics.get(metric).copied().unwrap_or(f64::NAN)
    }

    pub fn metric_vector(&self, metric: &str) -> Result<Vec<f64>> {
        self.descriptor(metric)?;
        Ok((0..self.len()).map(|i| self.metric_value(i, metric)).collect())
    }

    /// Runs every invariant check and reports findings instead of failing.
    pub fn validate(&self) -> ValidationReport {
        validate_dataset(self)
    }
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("samples line {}", lineno + 1), e))?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_samples(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::parse("sample record", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum FindingStatus {
    Pass,
    Fail,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Finding {
    pub check: String,
    pub status: FindingStatus,
    pub message: String,
    pub sample_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.findings.iter().all(|f| f.status != FindingStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.status == FindingStatus::Fail)
    }

    pub fn finding(&self, check: &str) -> Option<&Finding> {
        self.findings.iter().find(|f| f.check == check)
    }
}

fn check(name: &str, failing: Vec<String>, what: &str) -> Finding {
    let (status, message) = if failing.is_empty() {
        (FindingStatus::Pass, format!("{name}: ok"))
    } else {
        (FindingStatus::Fail, format!("{what} in {} sample(s)", failing.len()))
    };
    Finding {
        check: name.to_string(),
        status,
        message,
        sample_ids: failing,
    }
}

pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let records = &dataset.records;
    let declared: HashSet<&str> = dataset.metric_names().collect();
    let mut findings = Vec::new();

    let mut seen = HashSet::new();
    let empty: Vec<String> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.id.is_empty())
        .map(|(i, _)| format!("#{i}"))
        .collect();
    findings.push(check("nonempty-ids", empty, "empty id"));
    let dups: Vec<String> = records
        .iter()
        .filter(|r| !seen.insert(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    findings.push(check("unique-ids", dups, "duplicate id"));

    let bad_ranges: Vec<String> = dataset
        .manifest
        .metric_descriptors
        .iter()
        .filter(|d| matches!(d.display_range, Some([lo, hi]) if !(lo < hi)))
        .map(|d| d.name.clone())
        .collect();
    findings.push(check("display-ranges", bad_ranges, "inverted display range"));

    let undeclared = records
        .iter()
        .filter(|r| r.metrics.keys().any(|k| !declared.contains(k.as_str())))
        .map(|r| r.id.clone())
        .collect();
    findings.push(check("declared-metrics", undeclared, "undeclared metric"));
    let incomplete = records
        .iter()
        .filter(|r| declared.iter().any(|d| !r.metrics.contains_key(*d)))
        .map(|r| r.id.clone())
        .collect();
    findings.push(check("complete-metrics", incomplete, "missing metric value"));
    let nonfinite = records
        .iter()
        .filter(|r| r.metrics.values().any(|v| !v.is_finite()))
        .map(|r| r.id.clone())
        .collect();
    findings.push(check("finite-metrics", nonfinite, "non-finite metric"));

    let mismatched = records
        .iter()
        .filter(|r| {
            !r.truth_assets.is_empty()
                && !r.prediction_assets.is_empty()
                && r.truth_assets.len() != r.prediction_assets.len()
        })
        .map(|r| r.id.clone())
        .collect();
    findings.push(check("asset-pairs", mismatched, "unpaired truth/prediction assets"));

    let rows = dataset.store.len();
    let count = if rows == records.len() {
        Vec::new()
    } else {
        vec![format!("{} records vs {rows} rows", records.len())]
    };
    findings.push(check("row-count", count, "sample/embedding count mismatch"));

    let label = |i: usize| records.get(i).map_or_else(|| format!("row {i}"), |r| r.id.clone());
    let nonfinite_rows = (0..rows)
        .filter(|&i| dataset.store.row(i).iter().any(|v| !v.is_finite()))
        .map(label)
        .collect();
    findings.push(check("finite-embeddings", nonfinite_rows, "non-finite embedding"));
    let zero_rows = (0..rows)
        .filter(|&i| dataset.store.norm(i) <= 0.0)
        .map(label)
        .collect();
    findings.push(check("nonzero-embeddings", zero_rows, "zero-norm embedding"));

    let missing: Vec<String> = records
        .iter()
        .filter(|r| r.caption.as_deref().is_none_or(str::is_empty))
        .map(|r| r.id.clone())
        .collect();
    let share = if records.is_empty() {
        0.0
    } else {
        100.0 * missing.len() as f64 / records.len() as f64
    };
    findings.push(Finding {
        check: "caption-coverage".into(),
        status: FindingStatus::Info,
        message: if missing.is_empty() {
            "all samples have captions".into()
        } else {
            format!("captions missing for {share:.0}% of samples")
        },
        sample_ids: missing,
    });

    ValidationReport { findings }
}

/// Componentwise mean of equal-length vectors, e.g. collapsing per-view embeddings of one
/// object into a single vector. Uses compensated summation.
pub fn aggregate_embedding(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = vectors.first().map(Vec::len).ok_or(Error::EmptyInput("embedding list"))?;
    let mut sum = vec![0.0f64; dim];
    let mut comp = vec![0.0f64; dim];
    for (k, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                context: format!("vector {k}"),
                expected: dim,
                actual: v.len(),
            });
        }
        for j in 0..dim {
            // Neumaier
            let t = sum[j] + v[j];
            if sum[j].abs() >= v[j].abs() {
                comp[j] += (sum[j] - t) + v[j];
            } else {
                comp[j] += (v[j] - t) + sum[j];
            }
            sum[j] = t;
        }
    }
    let n = vectors.len() as f64;
    Ok(sum.iter().zip(&comp).map(|(s, c)| (s + c) / n).collect())
}
