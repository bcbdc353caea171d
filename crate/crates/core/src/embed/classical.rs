use nalgebra::{DMatrix, SymmetricEigen};

use super::{check_input, Embedding, MdsMethod, EIGEN_ZERO_RATIO};
use crate::error::Result;
use crate::grid::DistanceMatrix;

/// Double-centered Gram matrix `B = -½ C D∘D C`, `C = I − 11ᵀ/n`.
pub(crate) fn gram_matrix(d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let sq = d.map(|v| v * v);
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let col_mean: Vec<f64> = (0..n).map(|j| sq.column(j).sum() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - col_mean[j] + grand));
    // Exact symmetry for the eigen-solver.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    b
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue, with
/// near-zero eigenvalues snapped to zero and each eigenvector's first nonzero
/// component made positive.
pub(crate) fn sorted_eigen(b: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = b.nrows();
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
    let scale = eig.eigenvalues.amax();
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let lam = eig.eigenvalues[src];
        values.push(if lam.abs() <= EIGEN_ZERO_RATIO * scale { 0.0 } else { lam });
        let mut v = eig.eigenvectors.column(src).into_owned();
        let vmax = v.amax();
        if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12 * vmax) {
            if first < 0.0 {
                v.neg_mut();
            }
        }
        vectors.set_column(dst, &v);
    }
    (values, vectors)
}

/// Classical (Torgerson) MDS from the top positive eigenpairs. When fewer than
/// `k` eigenvalues are positive the remaining columns are zero.
pub fn classical_mds(dist: &DistanceMatrix, k: usize) -> Result<Embedding> {
    check_input(dist, k)?;
    let n = dist.n();
    let (values, vectors) = sorted_eigen(gram_matrix(&dist.d));
    let mut coords = DMatrix::zeros(n, k);
    for c in 0..k {
        let lam = values[c];
        if lam <= 0.0 {
            break;
        }
        let s = lam.sqrt();
        for r in 0..n {
            coords[(r, c)] = vectors[(r, c)] * s;
        }
    }
    Ok(Embedding {
        coords,
        bus_ids: dist.bus_ids.clone(),
        method: MdsMethod::Classical,
        eigenvalues: Some(values),
        stress: None,
        stress_history: Vec::new(),
    })
}
