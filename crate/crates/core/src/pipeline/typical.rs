use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cluster::ClusterModel;
use super::labels::StabilityClass;
use crate::error::{Error, Result};
use crate::fields::CHARACTERISTIC_NAMES;
use crate::scengen::{regularization, select_components, EmConfig, GmmModel};
use crate::stats::Standardizer;

pub const TYPICAL_SET_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.2;
pub const DEFAULT_MAX_COMPONENTS: usize = 3;
/// Clusters smaller than this are modelled by a single Gaussian.
pub const MIN_MIXTURE_MEMBERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub covered: usize,
    pub total: usize,
    pub rate: f64,
}

/// Range of one stability index over a cluster's members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexRange {
    pub min: f64,
    pub max: f64,
}

impl IndexRange {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalCluster {
    pub cluster: usize,
    /// Scenario ids of the members, ascending.
    pub members: Vec<usize>,
    pub gmm: GmmModel,
    pub typical_id: usize,
    pub coverage: Coverage,
    /// Majority class of the members' index profiles.
    pub label: StabilityClass,
    /// Per-index ranges in the order of `TypicalScenarioSet::index_names`.
    pub index_ranges: Vec<IndexRange>,
}

/// The fitted model artifact: per-cluster mixtures over standardized
/// characteristics, typical scenarios, coverage and the label map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalScenarioSet {
    pub schema_version: u32,
    pub characteristic_names: Vec<String>,
    pub index_names: Vec<String>,
    /// Shared characteristic standardization, frozen at fit time.
    pub standardizer: Standardizer,
    pub coverage_threshold: f64,
    /// Largest pairwise distance in the standardized training set.
    pub distance_scale: f64,
    pub clusters: Vec<TypicalCluster>,
}

impl TypicalScenarioSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(text)?;
        if set.schema_version != TYPICAL_SET_SCHEMA_VERSION {
            return Err(Error::InvalidSpec(format!(
                "typical set schema_version {} (expected {TYPICAL_SET_SCHEMA_VERSION})",
                set.schema_version
            )));
        }
        if set.clusters.is_empty() {
            return Err(Error::UnfittedSet);
        }
        for c in &set.clusters {
            c.gmm.validate()?;
            if c.gmm.dim() != set.standardizer.dim() {
                return Err(Error::Dimension(format!(
                    "cluster {} mixture has dimension {}, standardization {}",
                    c.cluster,
                    c.gmm.dim(),
                    set.standardizer.dim()
                )));
            }
        }
        Ok(set)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::parse(path, j),
            other => other,
        })
    }

    /// Cluster, weighted Mahalanobis distance and class for a raw (not yet
    /// standardized) characteristic vector.
    pub fn predict(&self, raw: &[f64]) -> Result<(usize, f64, StabilityClass)> {
        if self.clusters.is_empty() {
            return Err(Error::UnfittedSet);
        }
        if raw.len() != self.standardizer.dim() {
            return Err(Error::Dimension(format!(
                "characteristic vector has {} entries, model expects {}",
                raw.len(),
                self.standardizer.dim()
            )));
        }
        let x = self.standardizer.apply_row(raw);
        let mut best: Option<(usize, f64)> = None;
        for (c, cl) in self.clusters.iter().enumerate() {
            let d = weighted_mahalanobis(&x, &cl.gmm)?;
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((c, d));
            }
        }
        let (c, d) = best.expect("nonempty");
        Ok((self.clusters[c].cluster, d, self.clusters[c].label))
    }
}

/// `sqrt((x−μ)ᵀ Σ⁻¹ (x−μ))` through a Cholesky solve.
pub fn mahalanobis(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let d = mean.len();
    if x.len() != d || cov.nrows() != d || cov.ncols() != d {
        return Err(Error::Dimension(format!(
            "point of length {}, mean {d}, covariance {}x{}",
            x.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonSpd("Mahalanobis covariance".into()))?;
    let diff = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    let z = chol.l().solve_lower_triangular(&diff).expect("Cholesky factor is nonsingular");
    Ok(z.norm())
}

/// Mixture-weight-weighted sum of per-component Mahalanobis distances.
pub fn weighted_mahalanobis(x: &[f64], model: &GmmModel) -> Result<f64> {
    (0..model.n_components()).try_fold(0.0, |acc, m| {
        Ok(acc + model.weights[m] * mahalanobis(x, &model.means[m], &model.covariance(m))?)
    })
}

fn single_gaussian(samples: &DMatrix<f64>) -> Result<GmmModel> {
    let (n, d) = samples.shape();
    let mean = samples.row_mean();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in 0..n {
        let diff = samples.row(r) - &mean;
        cov += diff.transpose() * &diff;
    }
    cov /= n as f64;
    let eps = regularization(samples);
    for i in 0..d {
        cov[(i, i)] += eps;
    }
    GmmModel::single(mean.iter().copied().collect(), cov)
}

/// Per-cluster mixture fit over globally standardized characteristics.
///
/// Clusters with at least [`MIN_MIXTURE_MEMBERS`] members get a BIC-selected
/// mixture with up to `m_max` components; smaller ones a single Gaussian
/// with the same `εI` floor.
pub fn fit_cluster_gmms(
    clusters: &ClusterModel,
    standardized: &DMatrix<f64>,
    m_max: usize,
    em: &EmConfig,
) -> Result<Vec<GmmModel>> {
    if standardized.nrows() != clusters.assignments.len() {
        return Err(Error::LengthMismatch(format!(
            "{} characteristic rows for {} clustered scenarios",
            standardized.nrows(),
            clusters.assignments.len()
        )));
    }
    (0..clusters.k)
        .into_par_iter()
        .map(|c| {
            let members = clusters.members(c);
            let rows = standardized.select_rows(&members);
            if members.len() < MIN_MIXTURE_MEMBERS || m_max <= 1 {
                single_gaussian(&rows)
            } else {
                Ok(select_components(&rows, m_max, em)?.model)
            }
        })
        .collect()
}

/// Member with the highest mixture density; ties go to the lowest id.
pub fn select_typical(model: &GmmModel, standardized: &DMatrix<f64>, members: &[usize]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    let logs = model.log_densities(&standardized.select_rows(members))?;
    for (&i, ld) in members.iter().zip(logs) {
        if best.is_none_or(|(j, b)| ld > b || (ld == b && i < j)) {
            best = Some((i, ld));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::DegenerateInput("cluster has no members".into()))
}

/// Largest pairwise Euclidean distance between rows.
pub fn max_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            (i + 1..x.nrows())
                .map(|j| (x.row(i) - x.row(j)).norm())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Share of all scenarios within `delta · scale` of the typical scenario.
pub fn coverage_rate(standardized: &DMatrix<f64>, typical: usize, delta: f64, scale: f64) -> Coverage {
    let n = standardized.nrows();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let covered = (0..n)
        .filter(|&i| (standardized.row(i) - standardized.row(typical)).norm() / scale <= delta)
        .count();
    Coverage {
        covered,
        total: n,
        rate: if n > 0 { covered as f64 / n as f64 } else { 0.0 },
    }
}

/// Fits the full typical-scenario model.
///
/// `chars` holds one raw characteristic row per scenario and `indices` the
/// matching stability indices (`index_names` order), both in the row order
/// `clusters` was built on; row position is the scenario id.
pub fn build_typical_set(
    clusters: &ClusterModel,
    chars: &DMatrix<f64>,
    indices: &DMatrix<f64>,
    index_names: &[&str],
    classes: &[StabilityClass],
    m_max: usize,
    em: &EmConfig,
    delta: f64,
) -> Result<TypicalScenarioSet> {
    let n = clusters.assignments.len();
    if chars.nrows() != n || indices.nrows() != n || classes.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{n} clustered scenarios, {} characteristic rows, {} index rows, {} classes",
            chars.nrows(),
            indices.nrows(),
            classes.len()
        )));
    }
    if index_names.len() != indices.ncols() {
        return Err(Error::Dimension("index names do not match the index columns".into()));
    }
    if !(delta >= 0.0) {
        return Err(Error::Config {
            field: "coverage_threshold".into(),
            message: format!("{delta} must be nonnegative"),
        });
    }
    let standardizer = Standardizer::fit(chars);
    let z = standardizer.apply(chars);
    let models = fit_cluster_gmms(clusters, &z, m_max, em)?;
    let scale = max_pairwise_distance(&z);
    let clusters_out = models
        .into_iter()
        .enumerate()
        .map(|(c, gmm)| {
            let members = clusters.members(c);
            let typical_id = select_typical(&gmm, &z, &members)?;
            let index_ranges = (0..indices.ncols())
                .map(|j| {
                    let vals = members.iter().map(|&i| indices[(i, j)]);
                    IndexRange {
                        min: vals.clone().fold(f64::INFINITY, f64::min),
                        max: vals.fold(f64::NEG_INFINITY, f64::max),
                    }
                })
                .collect();
            let label = StabilityClass::majority(members.iter().map(|&i| classes[i]));
            Ok(TypicalCluster {
                cluster: c,
                coverage: coverage_rate(&z, typical_id, delta, scale),
                members,
                gmm,
                typical_id,
                label,
                index_ranges,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TypicalScenarioSet {
        schema_version: TYPICAL_SET_SCHEMA_VERSION,
        characteristic_names: CHARACTERISTIC_NAMES
            .iter()
            .take(chars.ncols())
            .map(|s| s.to_string())
            .collect(),
        index_names: index_names.iter().map(|s| s.to_string()).collect(),
        standardizer,
        coverage_threshold: delta,
        distance_scale: scale,
        clusters: clusters_out,
    })
}
