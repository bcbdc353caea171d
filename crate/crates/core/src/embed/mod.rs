//! Electrical coordinate system: classical and metric (SMACOF) multidimensional
//! scaling of the electrical distance matrix, plus fidelity and spectrum
//! diagnostics.

mod classical;
mod smacof;

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DistanceMatrix;
use crate::stats::pearson;

pub use classical::classical_mds;
pub use smacof::{metric_mds, SmacofConfig, SmacofInit};

/// Eigenvalues within this fraction of the largest magnitude count as zero.
pub const EIGEN_ZERO_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MdsMethod {
    Classical,
    Metric,
}

impl std::str::FromStr for MdsMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "classical" => Ok(Self::Classical),
            "metric" => Ok(Self::Metric),
            other => Err(format!("unknown MDS method `{other}` (classical|metric)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    /// n × k coordinates, one row per bus.
    pub coords: DMatrix<f64>,
    pub bus_ids: Vec<u32>,
    pub method: MdsMethod,
    /// Full signed spectrum of the double-centered Gram matrix, descending.
    /// Classical only.
    pub eigenvalues: Option<Vec<f64>>,
    /// Final raw stress. Metric only.
    pub stress: Option<f64>,
    /// Stress before the first and after every SMACOF iteration. Metric only.
    pub stress_history: Vec<f64>,
}

impl Embedding {
    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn k(&self) -> usize {
        self.coords.ncols()
    }

    /// Pairwise Euclidean distances between embedded points.
    pub fn distances(&self) -> DMatrix<f64> {
        pairwise_distances(&self.coords)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bus_id");
        for c in 1..=self.k() {
            let _ = write!(out, ",x{c}");
        }
        out.push('\n');
        for (r, id) in self.bus_ids.iter().enumerate() {
            let _ = write!(out, "{id}");
            for c in 0..self.k() {
                let _ = write!(out, ",{}", self.coords[(r, c)]);
            }
            out.push('\n');
        }
        out
    }

    /// Parses `bus_id,x1..xk` rows. The method tag is not stored in the file.
    pub fn from_csv(text: &str, method: MdsMethod) -> std::result::Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty embedding file")?;
        let k = header.split(',').count().saturating_sub(1);
        if k == 0 {
            return Err("embedding header has no coordinate columns".into());
        }
        let mut ids = Vec::new();
        let mut vals = Vec::new();
        for (ln, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let id = cells
                .next()
                .and_then(|c| c.trim().parse::<u32>().ok())
                .ok_or(format!("row {}: bad bus id", ln + 2))?;
            let row: Vec<f64> = cells
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("row {}: {e}", ln + 2))?;
            if row.len() != k {
                return Err(format!("row {}: expected {k} coordinates", ln + 2));
            }
            ids.push(id);
            vals.extend(row);
        }
        Ok(Self {
            coords: DMatrix::from_row_slice(ids.len(), k, &vals),
            bus_ids: ids,
            method,
            eigenvalues: None,
            stress: None,
            stress_history: Vec::new(),
        })
    }
}

pub fn pairwise_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (0..x.ncols())
                .map(|c| (x[(i, c)] - x[(j, c)]).powi(2))
                .sum::<f64>()
                .sqrt();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Raw weighted stress `Σ_{i<j} w_ij (D_ij − d_ij)²`.
pub fn stress(target: &DMatrix<f64>, x: &DMatrix<f64>, weights: Option<&DMatrix<f64>>) -> f64 {
    let d = pairwise_distances(x);
    let n = target.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = weights.map_or(1.0, |w| w[(i, j)]);
            s += w * (target[(i, j)] - d[(i, j)]).powi(2);
        }
    }
    s
}

fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// Pearson correlation between embedded and electrical distances over the
/// strict upper triangle.
pub fn embedding_fidelity(dist: &DistanceMatrix, emb: &Embedding) -> Result<f64> {
    if emb.n() != dist.n() {
        return Err(Error::Dimension(format!(
            "embedding has {} points, distance matrix {}",
            emb.n(),
            dist.n()
        )));
    }
    if dist.n() < 3 {
        return Err(Error::DegenerateInput("fidelity needs at least 3 points".into()));
    }
    let a = upper_triangle(&emb.distances());
    let b = upper_triangle(&dist.d);
    pearson(&a, &b).ok_or_else(|| {
        Error::DegenerateInput("embedded or electrical distances are constant".into())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub positive_count: usize,
    /// Full signed spectrum, descending.
    pub eigenvalues: Vec<f64>,
    /// Share of the positive-eigenvalue sum carried by the top m, m = 1..=positive_count.
    pub cumulative_share: Vec<f64>,
}

impl SpectrumReport {
    /// `rank,eigenvalue,cumulative_share`; ranks past the positive block carry
    /// the final share.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,eigenvalue,cumulative_share\n");
        let last = self.cumulative_share.last().copied().unwrap_or(0.0);
        for (r, ev) in self.eigenvalues.iter().enumerate() {
            let share = self.cumulative_share.get(r).copied().unwrap_or(last);
            let _ = writeln!(out, "{},{},{}", r + 1, ev, share);
        }
        out
    }
}

pub fn spectrum_report(emb: &Embedding) -> Result<SpectrumReport> {
    let ev = emb.eigenvalues.as_ref().ok_or(Error::MethodMismatch {
        expected: "classical",
    })?;
    let positive: Vec<f64> = ev.iter().copied().filter(|v| *v > 0.0).collect();
    let total: f64 = positive.iter().sum();
    let mut acc = 0.0;
    let cumulative_share = positive
        .iter()
        .map(|v| {
            acc += v;
            acc / total
        })
        .collect();
    Ok(SpectrumReport {
        positive_count: positive.len(),
        eigenvalues: ev.clone(),
        cumulative_share,
    })
}

pub(crate) fn check_input(dist: &DistanceMatrix, k: usize) -> Result<()> {
    dist.check(1e-9)?;
    let n = dist.n();
    if n < 2 || k < 1 || k > n - 1 {
        return Err(Error::Dimension(format!(
            "embedding dimension {k} outside 1..={} for {n} points",
            n.saturating_sub(1)
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
