//! Correlation battery linking characteristics to stability indices:
//! Pearson, per-pair centered kernel alignment, CCA and kernel CCA.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::pearson;

/// Ridge added to the CCA covariance blocks.
pub const CCA_RIDGE: f64 = 1e-8;

/// Paired sample matrices with standardized columns.
#[derive(Debug, Clone)]
pub struct SampleMatrixPair {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
}

fn standardize(m: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut out = m.clone();
    for (c, mut col) in out.column_iter_mut().enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("column `{}`", names[c])));
        }
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ConstantColumn(names[c].clone()));
        }
        col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    Ok(out)
}

fn default_names(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|i| format!("{prefix}{}", i + 1)).collect()
}

impl SampleMatrixPair {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let (xn, yn) = (default_names("x", x.ncols()), default_names("y", y.ncols()));
        Self::with_names(x, y, xn, yn)
    }

    pub fn with_names(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        x_names: Vec<String>,
        y_names: Vec<String>,
    ) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Dimension(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.nrows() < 3 {
            return Err(Error::TooFewSamples {
                needed: 3,
                got: x.nrows(),
            });
        }
        if x.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::Dimension("empty variable set".into()));
        }
        if x_names.len() != x.ncols() || y_names.len() != y.ncols() {
            return Err(Error::Dimension("column names do not match column counts".into()));
        }
        Ok(Self {
            x: standardize(&x, &x_names)?,
            y: standardize(&y, &y_names)?,
            x_names,
            y_names,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    /// Standardized characteristic block.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// The pair restricted to one Y column.
    pub fn single_y(&self, j: usize) -> Self {
        Self {
            x: self.x.clone(),
            y: self.y.columns(j, 1).into_owned(),
            x_names: self.x_names.clone(),
            y_names: vec![self.y_names[j].clone()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct KernelConfig {
    pub kernel: KernelKind,
    /// Fixed RBF bandwidth; `None` uses the median pairwise distance.
    pub bandwidth: Option<f64>,
    /// KCCA regularization; `None` means `1e-3 · n_samples`.
    pub kappa: Option<f64>,
}

impl KernelConfig {
    pub fn kappa_for(&self, n: usize) -> f64 {
        self.kappa.unwrap_or(1e-3 * n as f64)
    }
}

fn median_distance(data: &DMatrix<f64>) -> f64 {
    let n = data.nrows();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push((data.row(i) - data.row(j)).norm());
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        return med;
    }
    // Heavily tied samples: fall back to the mean of nonzero distances.
    let nz: Vec<f64> = d.into_iter().filter(|v| *v > 0.0).collect();
    if nz.is_empty() {
        0.0
    } else {
        nz.iter().sum::<f64>() / nz.len() as f64
    }
}

/// Double-centered Gram matrix `H K H` of the rows of `data`.
fn centered_gram(data: &DMatrix<f64>, cfg: &KernelConfig, name: &str) -> Result<DMatrix<f64>> {
    let n = data.nrows();
    let mut k = match cfg.kernel {
        KernelKind::Linear => data * data.transpose(),
        KernelKind::Rbf => {
            let s = match cfg.bandwidth {
                Some(b) if b.is_finite() && b > 0.0 => b,
                Some(b) => {
                    return Err(Error::Config {
                        field: "kernel.bandwidth".into(),
                        message: format!("{b} must be positive"),
                    })
                }
                None => median_distance(data),
            };
            if !(s > 0.0) {
                return Err(Error::DegenerateKernel(name.to_string()));
            }
            DMatrix::from_fn(n, n, |i, j| {
                let d2 = (data.row(i) - data.row(j)).norm_squared();
                (-d2 / (2.0 * s * s)).exp()
            })
        }
    };
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] += grand - row_means[i] - row_means[j];
        }
    }
    // Exact symmetry.
    let k = (&k + k.transpose()) * 0.5;
    if k.norm() <= 1e-12 * n as f64 {
        return Err(Error::DegenerateKernel(name.to_string()));
    }
    Ok(k)
}

/// `p × q` table with row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl CorrelationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("characteristic");
        for c in &self.col_names {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (r, name) in self.row_names.iter().enumerate() {
            out.push_str(name);
            for c in 0..self.values.ncols() {
                out.push_str(&format!(",{}", self.values[(r, c)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.amax()
    }
}

fn table(pair: &SampleMatrixPair, values: DMatrix<f64>) -> CorrelationTable {
    CorrelationTable {
        row_names: pair.x_names.clone(),
        col_names: pair.y_names.clone(),
        values,
    }
}

pub fn pearson_matrix(pair: &SampleMatrixPair) -> CorrelationTable {
    let (p, q) = (pair.x.ncols(), pair.y.ncols());
    let cols = |m: &DMatrix<f64>, c: usize| m.column(c).iter().copied().collect::<Vec<_>>();
    let values = DMatrix::from_fn(p, q, |i, j| {
        // Standardized columns are never constant.
        pearson(&cols(&pair.x, i), &cols(&pair.y, j)).unwrap_or(0.0)
    });
    table(pair, values)
}

/// Centered kernel alignment of two sample sets.
pub fn cka(a: &DMatrix<f64>, b: &DMatrix<f64>, cfg: &KernelConfig) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension("CKA inputs differ in sample count".into()));
    }
    let ka = centered_gram(a, cfg, "first argument")?;
    let kb = centered_gram(b, cfg, "second argument")?;
    Ok((ka.dot(&kb) / (ka.norm() * kb.norm())).clamp(0.0, 1.0))
}

/// Per-column-pair centered kernel alignment.
pub fn kernel_correlation_matrix(
    pair: &SampleMatrixPair,
    cfg: &KernelConfig,
) -> Result<CorrelationTable> {
    let (p, q) = (pair.x.ncols(), pair.y.ncols());
    let xs: Vec<DMatrix<f64>> = (0..p)
        .into_par_iter()
        .map(|i| centered_gram(&pair.x.columns(i, 1).into_owned(), cfg, &pair.x_names[i]))
        .collect::<Result<_>>()?;
    let ys: Vec<DMatrix<f64>> = (0..q)
        .into_par_iter()
        .map(|j| centered_gram(&pair.y.columns(j, 1).into_owned(), cfg, &pair.y_names[j]))
        .collect::<Result<_>>()?;
    let values = DMatrix::from_fn(p, q, |i, j| {
        (xs[i].dot(&ys[j]) / (xs[i].norm() * ys[j].norm())).clamp(0.0, 1.0)
    });
    Ok(table(pair, values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaResult {
    pub rho: f64,
    /// Coefficients on the standardized X columns; `var(Xa) = 1`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Inverse square root of an SPD matrix.
fn inv_sqrt(c: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(c);
    let max = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|l| !(*l > 1e-14 * max.max(1.0)) || !l.is_finite()) {
        return Err(Error::RankDeficient);
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

fn sample_variance(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let m = v.sum() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// First canonical pair. The reported correlation is the sample correlation
/// of the canonical variates, so the ridge does not bias it.
pub fn cca(pair: &SampleMatrixPair) -> Result<CcaResult> {
    let (n, p, q) = (pair.n_samples(), pair.x.ncols(), pair.y.ncols());
    if n <= p + q {
        return Err(Error::TooFewSamples {
            needed: p + q + 1,
            got: n,
        });
    }
    let s = 1.0 / (n - 1) as f64;
    let ridge = |m: DMatrix<f64>| {
        let k = m.nrows();
        m * s + DMatrix::identity(k, k) * CCA_RIDGE
    };
    let cxx = ridge(pair.x.transpose() * &pair.x);
    let cyy = ridge(pair.y.transpose() * &pair.y);
    let cxy = pair.x.transpose() * &pair.y * s;
    let wx = inv_sqrt(cxx)?;
    let wy = inv_sqrt(cyy)?;
    let t = &wx * cxy * &wy;
    let svd = t.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let top = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or(Error::RankDeficient)?;
    let mut a = &wx * u.column(top);
    let mut b = &wy * vt.row(top).transpose();
    let (xa, yb) = (&pair.x * &a, &pair.y * &b);
    let (va, vb) = (sample_variance(&xa), sample_variance(&yb));
    if !(va > 0.0 && vb > 0.0) {
        return Err(Error::RankDeficient);
    }
    a /= va.sqrt();
    b /= vb.sqrt();
    let xa: Vec<f64> = (&pair.x * &a).iter().copied().collect();
    let yb: Vec<f64> = (&pair.y * &b).iter().copied().collect();
    let mut rho = pearson(&xa, &yb).ok_or(Error::RankDeficient)?;
    if rho < 0.0 {
        b = -b;
        rho = -rho;
    }
    if let Some(first) = a.iter().copied().find(|v| *v != 0.0) {
        if first < 0.0 {
            a = -a;
            b = -b;
        }
    }
    Ok(CcaResult {
        rho: rho.min(1.0),
        a: a.iter().copied().collect(),
        b: b.iter().copied().collect(),
    })
}

/// Spectral shrink `U diag(λ / √(λ² + κ)) Uᵀ` of a centered Gram matrix,
/// i.e. `(K² + κI)^{-1/2} K`.
fn shrunk(k: DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(k);
    let d = eig.eigenvalues.map(|l| l / (l * l + kappa).sqrt());
    let scaled = DMatrix::from_fn(d.len(), d.len(), |i, j| eig.eigenvectors[(i, j)] * d[j]);
    scaled * eig.eigenvectors.transpose()
}

/// First regularized kernel canonical correlation. Substituting
/// `u = (K_X² + κI)^{1/2} α` (and likewise for β) turns the Rayleigh quotient
/// into the largest singular value of
/// `(K_X² + κI)^{-1/2} K_X K_Y (K_Y² + κI)^{-1/2}`.
pub fn kcca(pair: &SampleMatrixPair, cfg: &KernelConfig) -> Result<f64> {
    let (n, p, q) = (pair.n_samples(), pair.x.ncols(), pair.y.ncols());
    if n <= p + q {
        return Err(Error::TooFewSamples {
            needed: p + q + 1,
            got: n,
        });
    }
    let kappa = cfg.kappa_for(n);
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::Config {
            field: "kernel.kappa".into(),
            message: format!("{kappa} must be positive"),
        });
    }
    let (kx, ky) = rayon::join(
        || centered_gram(&pair.x, cfg, "X"),
        || centered_gram(&pair.y, cfg, "Y"),
    );
    let (kx, ky) = (kx?, ky?);
    let (ax, ay) = rayon::join(|| shrunk(kx, kappa), || shrunk(ky, kappa));
    let m = ax * ay;
    let top = m.singular_values().amax();
    Ok(top.clamp(0.0, 1.0))
}

/// CCA and KCCA of all characteristics against each stability column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRow {
    pub index: String,
    pub cca: f64,
    pub kcca: f64,
}

pub fn per_index_canonical(pair: &SampleMatrixPair, cfg: &KernelConfig) -> Result<Vec<CanonicalRow>> {
    (0..pair.y.ncols())
        .into_par_iter()
        .map(|j| {
            let single = pair.single_y(j);
            Ok(CanonicalRow {
                index: pair.y_names[j].clone(),
                cca: cca(&single)?.rho,
                kcca: kcca(&single, cfg)?,
            })
        })
        .collect()
}

pub fn canonical_csv(rows: &[CanonicalRow]) -> String {
    let mut out = String::from("index,cca,kcca\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.index, r.cca, r.kcca));
    }
    out
}
