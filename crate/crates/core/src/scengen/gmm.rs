use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GMM_SCHEMA_VERSION: u32 = 1;
/// Components whose weight falls below this are pruned during EM.
pub const MIN_COMPONENT_WEIGHT: f64 = 1e-8;

/// Gaussian mixture. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    #[serde(default = "schema")]
    pub schema_version: u32,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `D × D` blocks.
    pub covariances: Vec<Vec<Vec<f64>>>,
}

fn schema() -> u32 {
    GMM_SCHEMA_VERSION
}

type Chol = Cholesky<f64, Dyn>;

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |r, c| rows[r][c])
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Cached Cholesky factors for repeated density evaluation.
struct Factored {
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    chol: Vec<Chol>,
    log_norm: Vec<f64>,
}

impl Factored {
    fn new(model: &GmmModel) -> Result<Self> {
        let d = model.dim();
        let mut chol = Vec::with_capacity(model.n_components());
        let mut log_norm = Vec::with_capacity(model.n_components());
        for (m, cov) in model.covariances.iter().enumerate() {
            let c = Cholesky::new(to_matrix(cov))
                .ok_or_else(|| Error::NonSpd(format!("component {m}")))?;
            let log_det: f64 = 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            log_norm.push(-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det));
            chol.push(c);
        }
        Ok(Self {
            log_weights: model.weights.iter().map(|w| w.ln()).collect(),
            means: model.means.iter().map(|m| DVector::from_column_slice(m)).collect(),
            chol,
            log_norm,
        })
    }

    /// `log ω_m + log N(x; μ_m, σ_m)` per component.
    fn component_logs(&self, x: &DVector<f64>, out: &mut Vec<f64>) {
        out.clear();
        for m in 0..self.means.len() {
            let diff = x - &self.means[m];
            let z = self.chol[m]
                .l_dirty()
                .solve_lower_triangular(&diff)
                .expect("cholesky diagonal is positive");
            out.push(self.log_weights[m] + self.log_norm[m] - 0.5 * z.norm_squared());
        }
    }
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let model = Self {
            schema_version: GMM_SCHEMA_VERSION,
            weights,
            means,
            covariances,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn single(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![from_matrix(&cov)])
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn covariance(&self, m: usize) -> DMatrix<f64> {
        to_matrix(&self.covariances[m])
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.weights.len();
        if m == 0 {
            return Err(Error::CollapsedComponent);
        }
        if self.means.len() != m || self.covariances.len() != m {
            return Err(Error::Dimension("mixture parts disagree in component count".into()));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::Dimension("mixture dimension is zero".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Dimension("mixture weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Dimension(format!("mixture weights sum to {total}")));
        }
        for (k, (mu, cov)) in self.means.iter().zip(&self.covariances).enumerate() {
            if mu.len() != d || cov.len() != d || cov.iter().any(|r| r.len() != d) {
                return Err(Error::Dimension(format!("component {k} has the wrong dimension")));
            }
            if mu.iter().chain(cov.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("component {k}")));
            }
            let c = to_matrix(cov);
            if (&c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) {
                return Err(Error::NonSpd(format!("component {k} is not symmetric")));
            }
            if Cholesky::new(c).is_none() {
                return Err(Error::NonSpd(format!("component {k}")));
            }
        }
        Ok(())
    }

    /// Mixture log-density at `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!("point has {} coordinates, model {}", x.len(), self.dim())));
        }
        let f = Factored::new(self)?;
        let mut buf = Vec::new();
        f.component_logs(&DVector::from_column_slice(x), &mut buf);
        Ok(log_sum_exp(&buf))
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// Log-densities of many points with a single factorization.
    pub fn log_densities(&self, points: &DMatrix<f64>) -> Result<Vec<f64>> {
        if points.ncols() != self.dim() {
            return Err(Error::Dimension("point dimension mismatch".into()));
        }
        let f = Factored::new(self)?;
        let mut buf = Vec::new();
        Ok((0..points.nrows())
            .map(|r| {
                f.component_logs(&points.row(r).transpose(), &mut buf);
                log_sum_exp(&buf)
            })
            .collect())
    }

    /// Draws `n` points: component by weight, then `μ + L z`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let f = Factored::new(self)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = DMatrix::zeros(n, d);
        for r in 0..n {
            let m = self.pick_component(rng.random::<f64>());
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &f.means[m] + f.chol[m].l_dirty().lower_triangle() * z;
            out.row_mut(r).copy_from(&x.transpose());
        }
        Ok(out)
    }

    pub(crate) fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (m, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return m;
            }
        }
        self.weights.len() - 1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mixture serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Relative change of the EM objective that stops the iteration.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihood: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Covariance regularization that was added to every component.
    pub regularization: f64,
    /// EM objective after each iteration (nondecreasing).
    pub objective_history: Vec<f64>,
}

/// `ε = 1e-6 · trace(S) / D` of the sample covariance; a tiny absolute floor
/// keeps identical samples factorizable.
pub fn regularization(samples: &DMatrix<f64>) -> f64 {
    let (n, d) = samples.shape();
    let mut trace = 0.0;
    for col in samples.column_iter() {
        let m = col.sum() / n as f64;
        trace += col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    }
    let eps = 1e-6 * trace / d as f64;
    if eps > 0.0 {
        eps
    } else {
        1e-12
    }
}

pub fn free_parameters(m: usize, d: usize) -> usize {
    (m - 1) + m * d + m * d * (d + 1) / 2
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
pub(crate) fn kmeans_pp(samples: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = samples.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| (samples.row(i) - samples.row(chosen[0])).norm_squared())
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min((samples.row(i) - samples.row(next)).norm_squared());
        }
    }
    chosen
}

/// Maximum-likelihood fit by EM with `εI` added to every covariance.
///
/// The regularized M-step is the exact maximizer when each component density
/// carries the factor `exp(−ε·tr(σ_m⁻¹)/2)`; EM on that objective is
/// monotone, and the iteration asserts it. The reported log-likelihood is the
/// plain mixture likelihood.
pub fn gmm_fit(samples: &DMatrix<f64>, m: usize, cfg: &EmConfig) -> Result<GmmFit> {
    let (n, d) = samples.shape();
    if m == 0 || d == 0 {
        return Err(Error::Dimension("need at least one component and one dimension".into()));
    }
    if n < m * (d + 1) {
        return Err(Error::TooFewSamples {
            needed: m * (d + 1),
            got: n,
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training sample".into()));
    }
    let eps = regularization(samples);
    let reg = DMatrix::<f64>::identity(d, d) * eps;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let global_mean = samples.row_mean().transpose();
    let centred = DMatrix::from_fn(n, d, |r, c| samples[(r, c)] - global_mean[c]);
    let global_cov = centred.transpose() * &centred / n as f64 + &reg;

    let mut means: Vec<DVector<f64>> = kmeans_pp(samples, m, &mut rng)
        .into_iter()
        .map(|i| samples.row(i).transpose())
        .collect();
    let mut covs: Vec<DMatrix<f64>> = vec![global_cov; m];
    let mut weights = vec![1.0 / m as f64; m];

    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut resp = DMatrix::<f64>::zeros(n, m);
    let mut logs = Vec::with_capacity(m);
    loop {
        // E-step on the penalized component densities.
        let k = weights.len();
        let mut chol = Vec::with_capacity(k);
        let mut log_norm = Vec::with_capacity(k);
        for (j, c) in covs.iter().enumerate() {
            let ch = Cholesky::new(c.clone()).ok_or_else(|| Error::NonSpd(format!("component {j}")))?;
            let l = ch.l_dirty();
            let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let trace_inv = ch.inverse().trace();
            log_norm.push(
                weights[j].ln() - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det)
                    - 0.5 * eps * trace_inv,
            );
            chol.push(ch);
        }
        resp.resize_mut(n, k, 0.0);
        let mut objective = 0.0;
        for i in 0..n {
            let x = samples.row(i).transpose();
            logs.clear();
            for j in 0..k {
                let z = chol[j]
                    .l_dirty()
                    .solve_lower_triangular(&(&x - &means[j]))
                    .expect("positive diagonal");
                logs.push(log_norm[j] - 0.5 * z.norm_squared());
            }
            let lse = log_sum_exp(&logs);
            objective += lse;
            for j in 0..k {
                resp[(i, j)] = (logs[j] - lse).exp();
            }
        }
        if let Some(&prev) = history.last() {
            let slack = 1e-9 * prev.abs().max(1.0);
            assert!(
                objective >= prev - slack,
                "EM objective decreased from {prev} to {objective}"
            );
            if (objective - prev).abs() <= cfg.tolerance * prev.abs() {
                history.push(objective);
                converged = true;
                break;
            }
        }
        history.push(objective);
        if iterations >= cfg.max_iterations {
            break;
        }
        iterations += 1;

        // M-step.
        let nk: Vec<f64> = (0..k).map(|j| resp.column(j).sum()).collect();
        // A component carried by fewer than D + 1 effective samples cannot
        // support a full covariance; left alone it shrinks onto a point and
        // the likelihood grows without bound.
        let keep: Vec<usize> = (0..k)
            .filter(|&j| nk[j] / n as f64 >= MIN_COMPONENT_WEIGHT && nk[j] >= (d + 1) as f64)
            .collect();
        if keep.is_empty() {
            return Err(Error::CollapsedComponent);
        }
        if keep.len() < k {
            log::debug!("pruning {} collapsed mixture component(s)", k - keep.len());
            // Restart the objective sequence: the model class changed.
            history.clear();
        }
        let total: f64 = keep.iter().map(|&j| nk[j]).sum();
        let mut new_means = Vec::with_capacity(keep.len());
        let mut new_covs = Vec::with_capacity(keep.len());
        let mut new_weights = Vec::with_capacity(keep.len());
        for &j in &keep {
            let r = resp.column(j);
            let mu = samples.transpose() * r / nk[j];
            let mut cov = DMatrix::zeros(d, d);
            for i in 0..n {
                let diff = samples.row(i).transpose() - &mu;
                cov += &diff * diff.transpose() * r[i];
            }
            cov /= nk[j];
            cov += &reg;
            cov = (&cov + cov.transpose()) * 0.5;
            new_means.push(mu);
            new_covs.push(cov);
            new_weights.push(nk[j] / total);
        }
        means = new_means;
        covs = new_covs;
        weights = new_weights;
    }
    let model = GmmModel {
        schema_version: GMM_SCHEMA_VERSION,
        weights: normalized(&weights),
        means: means.iter().map(|v| v.iter().copied().collect()).collect(),
        covariances: covs.iter().map(from_matrix).collect(),
    };
    model.validate()?;
    let log_likelihood: f64 = model.log_densities(samples)?.iter().sum();
    let bic = -2.0 * log_likelihood + free_parameters(model.n_components(), d) as f64 * (n as f64).ln();
    Ok(GmmFit {
        model,
        log_likelihood,
        bic,
        iterations,
        converged,
        regularization: eps,
        objective_history: history,
    })
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    let mut out: Vec<f64> = w.iter().map(|v| v / s).collect();
    // Put the rounding residue on the largest weight so the sum is 1.
    let resid = 1.0 - out.iter().sum::<f64>();
    if let Some(i) = (0..out.len()).max_by(|a, b| out[*a].total_cmp(&out[*b])) {
        out[i] += resid;
    }
    out
}

/// Fits `M = 1 … m_max` and returns the fit with the smallest BIC; ties go
/// to fewer components. Counts infeasible for the sample size are skipped.
pub fn select_components(samples: &DMatrix<f64>, m_max: usize, cfg: &EmConfig) -> Result<GmmFit> {
    if m_max == 0 {
        return Err(Error::Dimension("m_max must be at least 1".into()));
    }
    let (n, d) = samples.shape();
    let mut best: Option<GmmFit> = None;
    for m in 1..=m_max {
        if m > 1 && n < m * (d + 1) {
            break;
        }
        let fit = gmm_fit(samples, m, cfg)?;
        let better = match &best {
            None => true,
            Some(b) => fit.bic < b.bic - 1e-9 * b.bic.abs(),
        };
        if better {
            best = Some(fit);
        }
    }
    best.ok_or(Error::TooFewSamples { needed: d + 1, got: n })
}
