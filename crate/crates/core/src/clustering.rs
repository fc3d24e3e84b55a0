//! Seeded k-means (k-means++ initialisation, Lloyd iterations) and DBSCAN over either the
//! full embedding space or a 2-D projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hashing::short_hash;
use crate::projection::Projection;
use crate::subgroup::{Provenance, Subgroup, SubgroupCache, SubgroupKind};

pub const DEFAULT_K: usize = 20;
pub const MAX_UI_K: usize = 50;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum ClusteringMethod {
    Kmeans,
    Dbscan,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ClusteringSpace {
    #[default]
    FullDim,
    Projected2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ClusteringConfig {
    pub method: ClusteringMethod,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub space: ClusteringSpace,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_iters")]
    pub kmeans_max_iters: usize,
    #[serde(default = "default_tol")]
    pub kmeans_tol: f64,
    /// Independent k-means++ restarts; the run with the lowest final inertia wins.
    #[serde(default = "default_restarts")]
    pub kmeans_restarts: usize,
    #[serde(default = "default_eps")]
    pub dbscan_eps: f64,
    #[serde(default = "default_min_pts")]
    pub dbscan_min_pts: usize,
}

fn default_k() -> usize {
    DEFAULT_K
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_iters() -> usize {
    300
}
fn default_tol() -> f64 {
    1e-4
}
fn default_restarts() -> usize {
    10
}
fn default_eps() -> f64 {
    0.5
}
fn default_min_pts() -> usize {
    5
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self::kmeans(DEFAULT_K)
    }
}

impl ClusteringConfig {
    pub fn kmeans(k: usize) -> Self {
        Self {
            method: ClusteringMethod::Kmeans,
            k,
            space: ClusteringSpace::FullDim,
            seed: DEFAULT_SEED,
            kmeans_max_iters: default_iters(),
            kmeans_tol: default_tol(),
            kmeans_restarts: default_restarts(),
            dbscan_eps: default_eps(),
            dbscan_min_pts: default_min_pts(),
        }
    }

    pub fn dbscan(eps: f64, min_pts: usize) -> Self {
        Self {
            method: ClusteringMethod::Dbscan,
            dbscan_eps: eps,
            dbscan_min_pts: min_pts,
            ..Self::kmeans(DEFAULT_K)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_space(mut self, space: ClusteringSpace) -> Self {
        self.space = space;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self.method {
            ClusteringMethod::Kmeans => {
                if self.k == 0 {
                    return Err(Error::InvalidArgument("k must be at least 1".into()));
                }
                if self.k > n {
                    return Err(Error::InvalidArgument(format!("k = {} exceeds sample count {n}", self.k)));
                }
                if self.kmeans_max_iters == 0 {
                    return Err(Error::InvalidArgument("kmeans_max_iters must be positive".into()));
                }
                if self.kmeans_restarts == 0 {
                    return Err(Error::InvalidArgument("kmeans_restarts must be positive".into()));
                }
            }
            ClusteringMethod::Dbscan => {
                if !(self.dbscan_eps > 0.0) {
                    return Err(Error::InvalidArgument("dbscan_eps must be positive".into()));
                }
                if self.dbscan_min_pts == 0 {
                    return Err(Error::InvalidArgument("dbscan_min_pts must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        short_hash(serde_json::to_vec(self).unwrap_or_default())
    }
}

/// Flat row-major point set.
#[derive(Debug, Clone)]
pub struct Points {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Points {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

/// Greedy k-means++ seeding: each step draws `2 + ln k` candidates with probability
/// proportional to squared distance and keeps the one that lowers the potential most.
fn plus_plus_init(points: &Points, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points.row(first).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut best: Option<(f64, usize, Vec<f64>)> = None;
            for _ in 0..trials {
                let cand = sample_weighted(&d2, rng.random::<f64>() * total);
                let row = points.row(cand);
                let updated: Vec<f64> = d2
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| w.min(sq_dist(points.row(i), row)))
                    .collect();
                let potential: f64 = updated.iter().sum();
                if best.as_ref().is_none_or(|b| potential < b.0) {
                    best = Some((potential, cand, updated));
                }
            }
            let (_, cand, updated) = best.expect("at least two trials");
            d2 = updated;
            cand
        } else {
            // Every remaining point coincides with a center.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centers.push(points.row(next).to_vec());
    }
    centers
}

fn sample_weighted(weights: &[f64], mut target: f64) -> usize {
    let mut pick = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        pick = Some(i);
        if target < w {
            break;
        }
        target -= w;
    }
    pick.expect("positive total implies a positive weight")
}

fn assign(points: &Points, centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    (0..points.len())
        .map(|i| {
            let p = points.row(i);
            centers
                .iter()
                .enumerate()
                .map(|(c, center)| (c, sq_dist(p, center)))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        })
        .unzip()
}

fn update(points: &Points, labels: &[usize], dists: &[f64], k: usize) -> Vec<Vec<f64>> {
    let dim = points.dim;
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    // Empty clusters are re-seeded at the points farthest from their current centers.
    let mut far: Vec<usize> = (0..points.len()).collect();
    far.sort_by(|&a, &b| dists[b].partial_cmp(&dists[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut far = far.into_iter();
    sums.into_iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c > 0 {
                s.into_iter().map(|v| v / c as f64).collect()
            } else {
                points.row(far.next().unwrap_or(0)).to_vec()
            }
        })
        .collect()
}

/// Lloyd's algorithm from a k-means++ seeding. Stops when assignments are stable, the summed
/// squared center shift drops below `tol` times the mean per-feature variance, or after
/// `max_iters` updates. Every label in `0..k` is used by at least one point when `k <= n`.
pub fn kmeans(points: &Points, k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={n}")));
    }
    let dim = points.dim;
    let mean_var = {
        let mut var = 0.0;
        for j in 0..dim {
            let m = (0..n).map(|i| points.row(i)[j]).sum::<f64>() / n as f64;
            var += (0..n).map(|i| (points.row(i)[j] - m).powi(2)).sum::<f64>() / n as f64;
        }
        var / dim as f64
    };
    let threshold = tol * mean_var;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let (mut labels, mut dists) = assign(points, &centers);
    let mut history = vec![dists.iter().sum::<f64>()];
    for _ in 0..max_iters {
        let next = update(points, &labels, &dists, k);
        let shift: f64 = centers.iter().zip(&next).map(|(a, b)| sq_dist(a, b)).sum();
        let (new_labels, new_dists) = assign(points, &next);
        history.push(new_dists.iter().sum());
        let changed = new_labels != labels;
        centers = next;
        labels = new_labels;
        dists = new_dists;
        if !changed || shift <= threshold {
            break;
        }
    }
    fill_empty(points, &mut labels, &centers, k);
    Ok(KMeansResult {
        labels,
        centers,
        inertia_history: history,
    })
}

/// Coincident points can leave a label unused; move the farthest member of the largest
/// cluster into each empty one.
fn fill_empty(points: &Points, labels: &mut [usize], centers: &[Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
        let victim = (0..labels.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&a, &b| {
                sq_dist(points.row(a), &centers[largest])
                    .partial_cmp(&sq_dist(points.row(b), &centers[largest]))
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            })
            .unwrap();
        labels[victim] = empty;
    }
}

/// Runs [`kmeans`] `restarts` times with seeds `seed, seed + 1, ...` and keeps the run with
/// the lowest final inertia (the earliest on ties).
pub fn kmeans_restarts(points: &Points, k: usize, seed: u64, restarts: usize, max_iters: usize, tol: f64) -> Result<KMeansResult> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be positive".into()));
    }
    let mut best = kmeans(points, k, seed, max_iters, tol)?;
    for r in 1..restarts {
        let run = kmeans(points, k, seed.wrapping_add(r as u64), max_iters, tol)?;
        if run.inertia() < best.inertia() {
            best = run;
        }
    }
    Ok(best)
}

pub const NOISE: usize = usize::MAX;

/// Classic DBSCAN with Euclidean distance. `min_pts` counts the point itself. Returns one
/// label per point; noise is [`NOISE`]. Clusters are numbered in order of discovery.
pub fn dbscan(points: &Points, eps: f64, min_pts: usize) -> Vec<usize> {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n).filter(|&j| sq_dist(points.row(i), points.row(j)) <= eps2).collect()
    };
    let mut labels = vec![None; n];
    let mut next = 0;
    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        let seeds = neighbors(i);
        if seeds.len() < min_pts {
            labels[i] = Some(NOISE);
            continue;
        }
        let cluster = next;
        next += 1;
        labels[i] = Some(cluster);
        let mut queue: std::collections::VecDeque<usize> = seeds.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            match labels[j] {
                Some(NOISE) => labels[j] = Some(cluster),
                Some(_) => continue,
                None => {
                    labels[j] = Some(cluster);
                    let nj = neighbors(j);
                    if nj.len() >= min_pts {
                        queue.extend(nj);
                    }
                }
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap_or(NOISE)).collect()
}

fn points_for(dataset: &Dataset, config: &ClusteringConfig, projection: Option<&Projection>) -> Result<Points> {
    match config.space {
        ClusteringSpace::FullDim => Ok(Points {
            dim: dataset.dim(),
            data: dataset.store().rows().flatten().copied().collect(),
        }),
        ClusteringSpace::Projected2d => {
            let p = projection.ok_or_else(|| {
                Error::InvalidArgument("projected_2d clustering requires a projection".into())
            })?;
            if p.coords.len() != dataset.len() {
                return Err(Error::CountMismatch {
                    context: format!("projection has {} rows for {} samples", p.coords.len(), dataset.len()),
                });
            }
            Ok(Points {
                dim: 2,
                data: p.coords.iter().flatten().copied().collect(),
            })
        }
    }
}

/// Partitions the dataset into cluster subgroups.
///
/// k-means yields exactly `k` nonempty subgroups. DBSCAN yields one subgroup per density
/// cluster plus, when any point is noise, an `unclustered` pseudo-subgroup holding them.
/// Cluster indices are renumbered by their lowest sample index, and members follow sample
/// order.
pub fn cluster(dataset: &Dataset, config: &ClusteringConfig, projection: Option<&Projection>) -> Result<Vec<Subgroup>> {
    config.validate(dataset.len())?;
    let points = points_for(dataset, config, projection)?;
    let labels = match config.method {
        ClusteringMethod::Kmeans => {
            kmeans_restarts(
                &points,
                config.k,
                config.seed,
                config.kmeans_restarts,
                config.kmeans_max_iters,
                config.kmeans_tol,
            )?
            .labels
        }
        ClusteringMethod::Dbscan => dbscan(&points, config.dbscan_eps, config.dbscan_min_pts),
    };

    let mut order: Vec<usize> = Vec::new();
    let mut groups: Vec<Vec<String>> = Vec::new();
    let mut noise = Vec::new();
    let mut slot = std::collections::HashMap::new();
    for (i, &l) in labels.iter().enumerate() {
        let id = dataset.record(i).id.clone();
        if l == NOISE {
            noise.push(id);
            continue;
        }
        let s = *slot.entry(l).or_insert_with(|| {
            order.push(l);
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[s].push(id);
    }

    let hash = config.config_hash();
    let mut out: Vec<Subgroup> = groups
        .into_iter()
        .enumerate()
        .map(|(idx, members)| Subgroup {
            id: format!("cluster-{hash}-{idx:02}"),
            kind: SubgroupKind::Cluster,
            members,
            provenance: Provenance::Cluster {
                config: config.clone(),
                cluster_index: Some(idx),
            },
            cache: SubgroupCache::default(),
        })
        .collect();
    if !noise.is_empty() {
        out.push(Subgroup {
            id: format!("cluster-{hash}-unclustered"),
            kind: SubgroupKind::Cluster,
            members: noise,
            provenance: Provenance::Cluster {
                config: config.clone(),
                cluster_index: None,
            },
            cache: SubgroupCache::default(),
        });
    }
    Ok(out)
}
