use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_input, classical_mds, pairwise_distances, stress, Embedding, MdsMethod};
use crate::error::{Error, Result};
use crate::grid::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SmacofInit {
    Classical,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmacofConfig {
    pub max_iterations: usize,
    /// Stop once `(σ_prev − σ) / σ_prev` falls below this.
    pub relative_tolerance: f64,
    /// Symmetric, nonnegative, zero diagonal. `None` means all ones.
    pub weights: Option<DMatrix<f64>>,
    pub init: SmacofInit,
}

impl Default for SmacofConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            relative_tolerance: 1e-7,
            weights: None,
            init: SmacofInit::Classical,
        }
    }
}

fn check_weights(w: &DMatrix<f64>, n: usize) -> Result<()> {
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::Dimension(format!("weights must be {n}x{n}")));
    }
    for i in 0..n {
        if w[(i, i)] != 0.0 {
            return Err(Error::DegenerateInput("weights need a zero diagonal".into()));
        }
        for j in 0..n {
            if !(w[(i, j)] >= 0.0) || w[(i, j)] != w[(j, i)] {
                return Err(Error::DegenerateInput(
                    "weights must be symmetric and nonnegative".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Moore–Penrose inverse of the weight Laplacian, `(V + 11ᵀ/n)⁻¹ − 11ᵀ/n`.
fn laplacian_pinv(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    let mut v = -w.clone();
    for i in 0..n {
        v[(i, i)] = w.row(i).sum();
    }
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    let inv = (v + &j)
        .try_inverse()
        .ok_or_else(|| Error::DegenerateInput("weight graph is disconnected".into()))?;
    Ok(inv - j)
}

fn guttman_transform(
    target: &DMatrix<f64>,
    x: &DMatrix<f64>,
    weights: Option<&DMatrix<f64>>,
    vpinv: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let n = x.nrows();
    let d = pairwise_distances(x);
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && d[(i, j)] > 0.0 {
                let w = weights.map_or(1.0, |w| w[(i, j)]);
                b[(i, j)] = -w * target[(i, j)] / d[(i, j)];
            }
        }
        b[(i, i)] = -b.row(i).sum();
    }
    match vpinv {
        Some(p) => p * (b * x),
        None => (b * x) / n as f64,
    }
}

/// Metric MDS by SMACOF stress majorization. The stress sequence recorded in
/// `stress_history` is nonincreasing; an iterate that would raise stress (only
/// possible through roundoff near convergence) ends the run with the previous
/// configuration.
pub fn metric_mds(dist: &DistanceMatrix, k: usize, cfg: &SmacofConfig) -> Result<Embedding> {
    check_input(dist, k)?;
    let n = dist.n();
    let weights = cfg.weights.as_ref();
    if let Some(w) = weights {
        check_weights(w, n)?;
    }
    let vpinv = weights.map(laplacian_pinv).transpose()?;

    let mut x = match cfg.init {
        SmacofInit::Classical => classical_mds(dist, k)?.coords,
        SmacofInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = dist.d.amax().max(f64::MIN_POSITIVE);
            let mut x = DMatrix::from_fn(n, k, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            });
            for c in 0..k {
                let m = x.column(c).mean();
                x.column_mut(c).add_scalar_mut(-m);
            }
            x
        }
    };

    let floor = 1e-30 * dist.d.iter().map(|v| v * v).sum::<f64>();
    let mut sigma = stress(&dist.d, &x, weights);
    let mut history = vec![sigma];
    for _ in 0..cfg.max_iterations {
        if sigma <= floor {
            break;
        }
        let next = guttman_transform(&dist.d, &x, weights, vpinv.as_ref());
        let s = stress(&dist.d, &next, weights);
        if s > sigma {
            break;
        }
        let improvement = (sigma - s) / sigma;
        x = next;
        sigma = s;
        history.push(sigma);
        if improvement < cfg.relative_tolerance {
            break;
        }
    }

    Ok(Embedding {
        coords: x,
        bus_ids: dist.bus_ids.clone(),
        method: MdsMethod::Metric,
        eigenvalues: None,
        stress: Some(sigma),
        stress_history: history,
    })
}
