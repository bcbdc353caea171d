use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scengen::kmeans_pp;
use crate::stats::Standardizer;

pub const KMEANS_RESTARTS: usize = 20;
pub const KMEANS_MAX_ITERATIONS: usize = 300;
/// Candidate cluster counts for automatic selection.
pub const AUTO_K: std::ops::RangeInclusive<usize> = 2..=6;

/// K-means partition of scenarios in standardized index space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// Cluster of every scenario (row order of the index matrix).
    pub assignments: Vec<usize>,
    /// Standardized centroids, ordered so cluster 0 has the highest TSI.
    pub centroids: Vec<Vec<f64>>,
    pub standardizer: Standardizer,
    pub inertia: f64,
    /// Mean silhouette; `None` for k = 1.
    pub silhouette: Option<f64>,
}

impl ClusterModel {
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == c).collect()
    }

    /// Centroid in the original index units.
    pub fn centroid_raw(&self, c: usize) -> Vec<f64> {
        self.centroids[c]
            .iter()
            .zip(self.standardizer.mean.iter().zip(&self.standardizer.std))
            .map(|(z, (m, s))| m + z * s)
            .collect()
    }
}

struct Partition {
    labels: Vec<usize>,
    centroids: DMatrix<f64>,
    inertia: f64,
}

fn nearest(x: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.nrows() {
        let d = (x.row(i) - centroids.row(c)).norm_squared();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(x: &DMatrix<f64>, mut centroids: DMatrix<f64>) -> Partition {
    let (n, k) = (x.nrows(), centroids.nrows());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        for (i, l) in labels.iter_mut().enumerate() {
            let (c, _) = nearest(x, i, &centroids);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::zeros(k, x.ncols());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            let mut row = sums.row_mut(l);
            row += x.row(i);
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.set_row(c, &(sums.row(c) / counts[c] as f64));
            } else {
                // Reseed an empty cluster at the point worst served.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        nearest(x, a, &centroids).1.total_cmp(&nearest(x, b, &centroids).1).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                centroids.set_row(c, &x.row(far));
            }
        }
    }
    let mut inertia = 0.0;
    for (i, l) in labels.iter_mut().enumerate() {
        let (c, d) = nearest(x, i, &centroids);
        *l = c;
        inertia += d;
    }
    Partition {
        labels,
        centroids,
        inertia,
    }
}

/// Best of [`KMEANS_RESTARTS`] k-means++ initialized Lloyd runs.
fn kmeans(x: &DMatrix<f64>, k: usize, seed: u64) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let runs: Vec<Partition> = (0..KMEANS_RESTARTS)
        .map(|_| {
            let init = kmeans_pp(x, k, &mut rng);
            let c = DMatrix::from_fn(k, x.ncols(), |r, j| x[(init[r], j)]);
            lloyd(x, c)
        })
        .collect();
    let inertias: Vec<f64> = runs.iter().map(|p| p.inertia).collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    assert!(inertias.iter().all(|&v| best.inertia <= v));
    best
}

/// Mean silhouette coefficient; singleton clusters contribute zero.
pub fn silhouette(x: &DMatrix<f64>, labels: &[usize], k: usize) -> f64 {
    let n = x.nrows();
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += (x.row(i) - x.row(j)).norm();
            }
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let s = if !b.is_finite() || a.max(b) == 0.0 {
            0.0
        } else {
            (b - a) / a.max(b)
        };
        total += s;
    }
    total / n as f64
}

/// Clusters scenarios on their stability indices.
///
/// Columns are standardized internally. With `k = None` the count in
/// [`AUTO_K`] (capped at n − 1) with the largest silhouette wins; ties go to
/// fewer clusters. `k = Some(1)` is a diagnostic mode. `tsi_column` selects
/// the column clusters are ordered by (descending centroid value).
pub fn cluster_scenarios(
    indices: &DMatrix<f64>,
    k: Option<usize>,
    tsi_column: usize,
    seed: u64,
) -> Result<ClusterModel> {
    let n = indices.nrows();
    if indices.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("stability index".into()));
    }
    if tsi_column >= indices.ncols() {
        return Err(Error::Dimension(format!("no index column {tsi_column}")));
    }
    let needed = match k {
        Some(0) => {
            return Err(Error::Config {
                field: "k".into(),
                message: "cluster count must be positive".into(),
            })
        }
        Some(k) => k.max(2),
        None => 3,
    };
    if n < needed {
        return Err(Error::TooFewScenarios { needed, got: n });
    }
    let standardizer = Standardizer::fit(indices);
    let x = standardizer.apply(indices);

    let (k, part, sil) = match k {
        Some(k) => {
            let p = kmeans(&x, k, seed);
            let s = (k > 1).then(|| silhouette(&x, &p.labels, k));
            (k, p, s)
        }
        None => {
            let mut best: Option<(usize, Partition, f64)> = None;
            for k in AUTO_K.filter(|&k| k < n) {
                let p = kmeans(&x, k, seed);
                let s = silhouette(&x, &p.labels, k);
                log::debug!("k = {k}: silhouette {s:.4}, inertia {:.4}", p.inertia);
                if best.as_ref().is_none_or(|b| s > b.2) {
                    best = Some((k, p, s));
                }
            }
            let (k, p, s) = best.expect("n >= 3 admits k = 2");
            (k, p, Some(s))
        }
    };

    // Duplicate points can leave a cluster empty; such clusters are dropped.
    let mut order: Vec<usize> = (0..k).filter(|c| part.labels.contains(c)).collect();
    order.sort_by(|&a, &b| {
        part.centroids[(b, tsi_column)]
            .total_cmp(&part.centroids[(a, tsi_column)])
            .then(a.cmp(&b))
    });
    let mut rank = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    Ok(ClusterModel {
        k: order.len(),
        assignments: part.labels.iter().map(|&l| rank[l]).collect(),
        centroids: order
            .iter()
            .map(|&c| part.centroids.row(c).iter().copied().collect())
            .collect(),
        standardizer,
        inertia: part.inertia,
        silhouette: sil,
    })
}
