//! 2-D layouts of the embedding space for the overview scatterplot.
//!
//! PCA is the reference projector. The neighbour-embedding layout is a small UMAP-style
//! force layout over the cosine k-NN graph; it is deterministic for a fixed seed but makes
//! no geometric guarantees.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    Pca,
    NeighborEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ProjectionParams {
    pub seed: u64,
    /// Neighbour count for the k-NN graph (neighbour embedding only).
    pub neighbors: usize,
    /// Optimisation epochs (neighbour embedding only).
    pub epochs: usize,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            seed: 42,
            neighbors: 15,
            epochs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Projection {
    pub method: ProjectionMethod,
    /// One `[x, y]` row per sample, in sample order.
    pub coords: Vec<[f64; 2]>,
    pub params: ProjectionParams,
    /// Unit principal directions (PCA only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<Vec<f64>>,
    /// Share of total variance captured by the returned components (PCA only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explained_variance_ratio: Option<f64>,
}

pub fn project(dataset: &Dataset, method: ProjectionMethod, params: &ProjectionParams) -> Result<Projection> {
    let n = dataset.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("projection needs at least 3 samples, got {n}")));
    }
    match method {
        ProjectionMethod::Pca => pca(dataset, params),
        ProjectionMethod::NeighborEmbedding => neighbor_embedding(dataset, params),
    }
}

fn centered_matrix(dataset: &Dataset) -> DMatrix<f64> {
    let (n, d) = (dataset.len(), dataset.dim());
    let mut x = DMatrix::from_fn(n, d, |i, j| dataset.store().row(i)[j]);
    for j in 0..d {
        let mean = x.column(j).sum() / n as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    x
}

fn pca(dataset: &Dataset, params: &ProjectionParams) -> Result<Projection> {
    let n = dataset.len();
    let x = centered_matrix(dataset);
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let total: f64 = cov.diagonal().iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::Degenerate("all points are identical; nothing to project".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let keep = order.len().min(2);
    let mut components = Vec::with_capacity(keep);
    let mut captured = 0.0;
    for &k in &order[..keep] {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // Sign convention: the largest-magnitude loading is positive.
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1.abs() { (i, *x) } else { best });
        if pivot.1 < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        captured += eig.eigenvalues[k].max(0.0);
        components.push(v);
    }
    let coords = (0..n)
        .map(|i| {
            let row = x.row(i);
            let mut c = [0.0; 2];
            for (slot, comp) in c.iter_mut().zip(&components) {
                *slot = row.iter().zip(comp).map(|(a, b)| a * b).sum();
            }
            c
        })
        .collect();
    Ok(Projection {
        method: ProjectionMethod::Pca,
        coords,
        params: params.clone(),
        components,
        explained_variance_ratio: Some(captured / total),
    })
}

// Curve parameters for min_dist = 0.1, spread = 1.0.
const CURVE_A: f64 = 1.577;
const CURVE_B: f64 = 0.895;
const NEGATIVE_SAMPLES: usize = 5;

fn neighbor_embedding(dataset: &Dataset, params: &ProjectionParams) -> Result<Projection> {
    let n = dataset.len();
    let k = params.neighbors.clamp(1, n - 1);
    let store = dataset.store();

    let init = pca(dataset, params)?;
    let mut y: Vec<[f64; 2]> = init.coords.clone();
    for axis in 0..2 {
        let sd = (y.iter().map(|p| p[axis] * p[axis]).sum::<f64>() / n as f64).sqrt();
        let scale = if sd > 0.0 { 10.0 / sd } else { 1.0 };
        y.iter_mut().for_each(|p| p[axis] *= scale);
    }

    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut sims: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dot: f64 = store.row(i).iter().zip(store.row(j)).map(|(a, b)| a * b).sum();
                (dot / (store.norm(i) * store.norm(j)), j)
            })
            .collect();
        sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        edges.extend(sims.iter().take(k).map(|&(_, j)| (i, j)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for p in y.iter_mut() {
        p[0] += rng.random_range(-1e-3..1e-3);
        p[1] += rng.random_range(-1e-3..1e-3);
    }
    let clip = |g: f64| g.clamp(-4.0, 4.0);
    for epoch in 0..params.epochs {
        let alpha = 1.0 - epoch as f64 / params.epochs as f64;
        for &(i, j) in &edges {
            let d2 = dist2(y[i], y[j]);
            if d2 > 0.0 {
                let coeff = -2.0 * CURVE_A * CURVE_B * d2.powf(CURVE_B - 1.0) / (1.0 + CURVE_A * d2.powf(CURVE_B));
                for axis in 0..2 {
                    let g = clip(coeff * (y[i][axis] - y[j][axis])) * alpha;
                    y[i][axis] += g;
                    y[j][axis] -= g;
                }
            }
            for _ in 0..NEGATIVE_SAMPLES {
                let m = rng.random_range(0..n);
                if m == i {
                    continue;
                }
                let d2 = dist2(y[i], y[m]);
                let coeff = 2.0 * CURVE_B / ((1e-3 + d2) * (1.0 + CURVE_A * d2.powf(CURVE_B)));
                for axis in 0..2 {
                    let g = if coeff > 0.0 { clip(coeff * (y[i][axis] - y[m][axis])) } else { 4.0 };
                    y[i][axis] += g * alpha;
                }
            }
        }
    }
    if y.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::Degenerate("neighbour embedding diverged".into()));
    }
    Ok(Projection {
        method: ProjectionMethod::NeighborEmbedding,
        coords: y,
        params: params.clone(),
        components: Vec::new(),
        explained_variance_ratio: None,
    })
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{EmbeddingStore, MetricDescriptor, MetricDirection, SampleRecord};

    fn ds(rows: Vec<Vec<f64>>) -> Dataset {
        let records = (0..rows.len())
            .map(|i| SampleRecord::new(format!("s{i:03}"), "x").with_metric("m", 0.0))
            .collect();
        Dataset::new(
            "p",
            ".",
            vec![MetricDescriptor::new("m", MetricDirection::LowerIsBetter)],
            records,
            EmbeddingStore::from_rows(&rows).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn rank_one_data_keeps_order() {
        let xs = [3.0, -1.0, 0.5, 2.0, 7.0];
        let d = ds(xs.iter().map(|x| vec![*x, 0.0, 0.0]).collect());
        let p = project(&d, ProjectionMethod::Pca, &ProjectionParams::default()).unwrap();
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                if xs[i] < xs[j] {
                    assert!(p.coords[i][0] < p.coords[j][0]);
                }
            }
            assert!(p.coords[i][1].abs() < 1e-9);
        }
        assert!((p.explained_variance_ratio.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let d = ds(vec![vec![1.0, 2.0]; 4]);
        assert!(matches!(
            project(&d, ProjectionMethod::Pca, &ProjectionParams::default()),
            Err(Error::Degenerate(_))
        ));
        let small = ds(vec![vec![1.0], vec![2.0]]);
        assert!(project(&small, ProjectionMethod::Pca, &ProjectionParams::default()).is_err());
    }

    #[test]
    fn neighbor_embedding_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let c = if i < 30 { 5.0 } else { -5.0 };
                (0..8).map(|_| c + rng.random_range(-1.0..1.0)).collect()
            })
            .collect();
        let d = ds(rows);
        let params = ProjectionParams {
            epochs: 50,
            ..Default::default()
        };
        let a = project(&d, ProjectionMethod::NeighborEmbedding, &params).unwrap();
        let b = project(&d, ProjectionMethod::NeighborEmbedding, &params).unwrap();
        assert_eq!(a.coords.len(), 60);
        assert_eq!(a, b);
        assert!(a.coords.iter().all(|c| c[0].is_finite() && c[1].is_finite()));
    }
}
