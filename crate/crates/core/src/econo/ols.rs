//! Least squares by Householder QR with a cluster-robust covariance.

use nalgebra::{DMatrix, DVector};

use super::EconoError;

/// Relative size below which a QR pivot marks a column as dependent on
/// the columns before it.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    /// CR1 cluster-robust covariance of `beta`.
    pub vcov: DMatrix<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    pub n_clusters: usize,
}

/// Subtract per-cluster means from every column of `m`.
pub(crate) fn demean(m: &mut DMatrix<f64>, clusters: &[usize], n_clusters: usize) {
    let mut counts = vec![0usize; n_clusters];
    for &g in clusters {
        counts[g] += 1;
    }
    for mut col in m.column_iter_mut() {
        let mut sums = vec![0.0; n_clusters];
        for (i, &g) in clusters.iter().enumerate() {
            sums[g] += col[i];
        }
        for (i, &g) in clusters.iter().enumerate() {
            col[i] -= sums[g] / counts[g] as f64;
        }
    }
}

/// OLS of `y` on `x` with CR1 errors clustered by `clusters` (indices
/// `0..n_clusters`). The small-sample factor is G/(G−1)·(N−1)/(N−K) with K
/// the number of columns of `x`. Rank deficiency is reported with the
/// names of the dependent columns.
pub fn ols_cluster_robust(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    clusters: &[usize],
    n_clusters: usize,
    names: &[String],
) -> Result<OlsFit, EconoError> {
    let (n, k) = x.shape();
    if n == 0 {
        return Err(EconoError::NoRows);
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let collinear: Vec<String> = (0..k)
        .filter(|&j| r[(j, j)].abs() <= RANK_TOL * x.column(j).norm().max(f64::MIN_POSITIVE))
        .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("x{j}")))
        .collect();
    if !collinear.is_empty() || n <= k {
        return Err(EconoError::Collinear(if collinear.is_empty() {
            vec!["(more columns than rows)".into()]
        } else {
            collinear
        }));
    }
    let q = qr.q();
    let qty = q.transpose() * y;
    let beta = r.solve_upper_triangular(&qty).ok_or_else(|| EconoError::Collinear(names.to_vec()))?;
    let r_inv =
        r.solve_upper_triangular(&DMatrix::identity(k, k)).ok_or_else(|| EconoError::Collinear(names.to_vec()))?;
    let bread = &r_inv * r_inv.transpose();

    let fitted = x * &beta;
    let residuals = y - &fitted;

    let mut scores = DMatrix::<f64>::zeros(n_clusters, k);
    for (i, &g) in clusters.iter().enumerate() {
        let e = residuals[i];
        for j in 0..k {
            scores[(g, j)] += x[(i, j)] * e;
        }
    }
    let meat = scores.transpose() * &scores;
    let g = n_clusters as f64;
    let c = g / (g - 1.0) * (n as f64 - 1.0) / (n as f64 - k as f64);
    let vcov = (&bread * meat * &bread) * c;
    Ok(OlsFit { beta, vcov, fitted, residuals, n_clusters })
}
