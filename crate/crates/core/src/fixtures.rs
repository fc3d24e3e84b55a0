//! Synthetic datasets with known ground truth, used by the test suites, the CLI
//! `synth-fixture` command and the service demo.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{Dataset, EmbeddingStore, MetricDescriptor, MetricDirection, SampleRecord};
use crate::error::{Error, Result};
use crate::gateway::{ProviderManifest, StubGateway};

pub const PLANTED_METRIC: &str = "error";
pub const PLANTED_CONCEPT: &str = "red umbrella";
pub const DISTRACTORS: [&str; 9] = [
    "low light",
    "motion blur",
    "small object",
    "reflective surface",
    "unusual viewpoint",
    "partial occlusion",
    "text overlay",
    "monochrome image",
    "crowded scene",
];

/// Parameters of the planted-aggressor generator.
///
/// Samples come from `topics` centres, each split into two facets. One facet hosts every
/// planted sample (shifted by `offset` along a concept direction orthogonal to all centres
/// and penalised by `penalty` on a lower-is-better metric) plus `facet_clean` unplanted ones.
#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub seed: u64,
    pub samples: usize,
    pub dim: usize,
    pub topics: usize,
    pub planted: usize,
    pub facet_clean: usize,
    pub center_norm: f64,
    pub facet_separation: f64,
    pub noise_sd: f64,
    pub offset: f64,
    pub penalty: f64,
    pub metric_sd: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            samples: 1000,
            dim: 64,
            topics: 10,
            planted: 100,
            facet_clean: 30,
            center_norm: 30.0,
            facet_separation: 32.0,
            noise_sd: 1.0,
            offset: 8.0,
            penalty: 0.5,
            metric_sd: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedFixture {
    pub dataset: Dataset,
    pub planted_ids: Vec<String>,
    pub concept_vector: Vec<f64>,
    pub concept_text: String,
    pub distractors: Vec<String>,
}

impl PlantedFixture {
    /// Embedding pins: the concept text maps to the planted direction, and each distractor to
    /// its stub hash vector with the planted direction projected out, so distractors are
    /// unrelated to the planted concept by construction.
    pub fn pins(&self) -> BTreeMap<String, Vec<f64>> {
        let mut pins = BTreeMap::from([(self.concept_text.clone(), self.concept_vector.clone())]);
        for d in &self.distractors {
            let mut v = StubGateway::hashed_vector(d, self.dataset.dim());
            let along = dot(&v, &self.concept_vector);
            v.iter_mut().zip(&self.concept_vector).for_each(|(x, c)| *x -= along * c);
            let n = dot(&v, &v).sqrt();
            pins.insert(d.clone(), v.into_iter().map(|x| x / n).collect());
        }
        pins
    }

    fn concept_list(&self) -> Vec<String> {
        std::iter::once(self.concept_text.clone()).chain(self.distractors.iter().cloned()).collect()
    }

    /// Stub gateway with [`PlantedFixture::pins`]. Its concept list is the planted text
    /// followed by the distractors.
    pub fn gateway(&self) -> StubGateway {
        self.pins()
            .into_iter()
            .fold(StubGateway::new(self.dataset.dim()), |g, (t, v)| g.with_pin(t, v))
            .with_concepts(self.concept_list())
    }

    pub fn provider_manifest(&self) -> ProviderManifest {
        ProviderManifest::Stub {
            dim: Some(self.dataset.dim()),
            pins: self.pins(),
            pin_samples: BTreeMap::new(),
            concepts: Some(self.concept_list()),
            prompt_budget_chars: None,
        }
    }

    pub fn is_planted(&self, id: &str) -> bool {
        self.planted_ids.binary_search_by(|p| p.as_str().cmp(id)).is_ok()
    }
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random unit vector orthogonal to every vector in `basis`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, dim: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    // Gram-Schmidt on the basis first, then project a random draw.
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut v = b.clone();
        for q in &ortho {
            let c = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-9 {
            ortho.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut v = unit(rng, dim);
    for q in &ortho {
        let c = dot(&v, q);
        v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
    }
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn planted_aggressor(config: &PlantedConfig) -> Result<PlantedFixture> {
    let c = config;
    let facets = c.topics * 2;
    if c.topics == 0 || c.planted + c.facet_clean > c.samples || c.samples < facets || 2 * c.topics + 1 > c.dim {
        return Err(Error::InvalidArgument("planted fixture parameters are inconsistent".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let centers: Vec<Vec<f64>> = (0..c.topics)
        .map(|_| unit(&mut rng, c.dim).into_iter().map(|x| x * c.center_norm).collect())
        .collect();
    let facet_dirs: Vec<Vec<f64>> = (0..c.topics).map(|_| unit(&mut rng, c.dim)).collect();
    let mut basis = centers.clone();
    basis.extend(facet_dirs.iter().cloned());
    let concept = orthogonal_unit(&mut rng, c.dim, &basis);

    // Facet 0 hosts the planted samples; the rest are spread evenly over the other facets.
    let mut assignment: Vec<(usize, bool)> = Vec::with_capacity(c.samples);
    assignment.extend(std::iter::repeat_n((0, true), c.planted));
    assignment.extend(std::iter::repeat_n((0, false), c.facet_clean));
    let rest = c.samples - c.planted - c.facet_clean;
    assignment.extend((0..rest).map(|i| (1 + i % (facets - 1), false)));
    assignment.shuffle(&mut rng);

    let noise = Normal::new(0.0, c.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let metric_noise = Normal::new(0.0, c.metric_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let half = c.facet_separation / 2.0;
    let mut rows = Vec::with_capacity(c.samples);
    let mut records = Vec::with_capacity(c.samples);
    let mut planted_ids = Vec::with_capacity(c.planted);
    for (i, &(facet, planted)) in assignment.iter().enumerate() {
        let (topic, side) = (facet / 2, if facet % 2 == 0 { half } else { -half });
        let mut row: Vec<f64> = centers[topic]
            .iter()
            .zip(&facet_dirs[topic])
            .map(|(m, f)| m + side * f + noise.sample(&mut rng))
            .collect();
        let mut value = metric_noise.sample(&mut rng);
        let id = format!("s{i:04}");
        let mut caption = format!("a scene from topic {topic}, variant {}", facet % 2);
        if planted {
            row.iter_mut().zip(&concept).for_each(|(x, d)| *x += c.offset * d);
            value += c.penalty;
            caption.push_str(&format!(" with a {PLANTED_CONCEPT}"));
            planted_ids.push(id.clone());
        }
        rows.push(row);
        records.push(
            SampleRecord::new(id.clone(), format!("images/{id}.png"))
                .with_metric(PLANTED_METRIC, value)
                .with_caption(caption),
        );
    }
    planted_ids.sort();
    let dataset = Dataset::new(
        "planted-aggressor",
        ".",
        vec![MetricDescriptor::new(PLANTED_METRIC, MetricDirection::LowerIsBetter)],
        records,
        EmbeddingStore::from_rows(&rows)?,
    )?;
    Ok(PlantedFixture {
        dataset,
        planted_ids,
        concept_vector: concept,
        concept_text: PLANTED_CONCEPT.to_string(),
        distractors: DISTRACTORS.iter().map(|s| s.to_string()).collect(),
    })
}

/// Eight-sample, 4-d dataset: two colour groups plus metrics in both directions.
pub fn tiny() -> Dataset {
    let spec: [(&str, [f64; 4], f64, f64, &str); 8] = [
        ("s1", [1.0, 0.1, 0.0, 0.0], 0.9, 0.1, "a red car on a street"),
        ("s2", [0.9, 0.2, 0.0, 0.1], 0.8, 0.2, "a red bus at night"),
        ("s3", [0.8, 0.0, 0.2, 0.0], 0.7, 0.3, "a red bicycle"),
        ("s4", [0.0, 1.0, 0.1, 0.0], 0.2, 0.8, "a blue boat"),
        ("s5", [0.1, 0.9, 0.0, 0.2], 0.1, 0.9, "a blue bird in the sky"),
        ("s6", [0.0, 0.1, 1.0, 0.0], 0.4, 0.6, "a green field"),
        ("s7", [0.2, 0.0, 0.9, 0.1], 0.5, 0.5, "a green tree"),
        ("s8", [0.0, 0.0, 0.1, 1.0], 0.3, 0.7, "a white wall"),
    ];
    let records = spec
        .iter()
        .map(|(id, _, err, acc, cap)| {
            SampleRecord::new(*id, format!("images/{id}.png"))
                .with_metric("error", *err)
                .with_metric("accuracy", *acc)
                .with_caption(*cap)
        })
        .collect();
    let rows: Vec<Vec<f64>> = spec.iter().map(|s| s.1.to_vec()).collect();
    Dataset::new(
        "tiny",
        ".",
        vec![
            MetricDescriptor::new("error", MetricDirection::LowerIsBetter).with_range(0.0, 1.0),
            MetricDescriptor::new("accuracy", MetricDirection::HigherIsBetter).with_range(0.0, 1.0),
        ],
        records,
        EmbeddingStore::from_rows(&rows).expect("fixture rows are valid"),
    )
    .expect("fixture is valid")
}

/// Writes the dataset files plus a small placeholder file for every referenced asset, so the
/// result can be ingested and captioned. Returns the manifest path.
pub fn write_with_assets(dataset: &Dataset, dir: &Path) -> Result<std::path::PathBuf> {
    let manifest = dataset.write_to_dir(dir)?;
    for r in dataset.records() {
        let assets = std::iter::once(&r.input_asset)
            .chain(&r.truth_assets)
            .chain(&r.prediction_assets);
        for asset in assets {
            let path = dir.join(asset);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, format!("placeholder for {}\n", r.id)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(manifest)
}

/// `n` points around `centers`, each coordinate with unit-variance noise. Returns rows and
/// the true centre index of each row.
pub fn gaussian_blobs(centers: &[Vec<f64>], per_center: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_center {
            rows.push(center.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect());
            labels.push(c);
        }
    }
    (rows, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_fixture_shape() {
        let f = planted_aggressor(&PlantedConfig::default()).unwrap();
        assert_eq!(f.dataset.len(), 1000);
        assert_eq!(f.dataset.dim(), 64);
        assert_eq!(f.planted_ids.len(), 100);
        assert!(f.dataset.validate().passed());
        let again = planted_aggressor(&PlantedConfig::default()).unwrap();
        assert_eq!(f.planted_ids, again.planted_ids);
        assert_eq!(f.concept_vector, again.concept_vector);
    }

    #[test]
    fn tiny_is_valid() {
        assert!(tiny().validate().passed());
    }
}
