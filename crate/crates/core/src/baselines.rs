//! Reference fusers to compare against: principal component analysis and
//! classical (Torgerson) multidimensional scaling to one dimension, plus the
//! correlation metrics used in the benchmark studies.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{canonicalize_sign, sym_eig};
use crate::stats::pearson;

/// Problem sizes up to this many rows use a full eigendecomposition of the
/// double-centered matrix; larger ones use power iteration for the top pair.
const MDS_DENSE_LIMIT: usize = 600;

/// PCA of the columns: scores, loadings, and component variances in
/// variance-descending order. Columns are centered internally; the covariance
/// matrix (n-1 divisor) is decomposed, not the correlation matrix.
pub fn pca_scores(data: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    pca_impl(data, false)
}

/// PCA on the correlation matrix: columns are standardized to unit variance
/// before the decomposition.
pub fn pca_scores_standardized(
    data: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    pca_impl(data, true)
}

fn pca_impl(
    data: &DMatrix<f64>,
    standardize: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let (n, k) = data.shape();
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "PCA needs n > K, got n = {n}, K = {k}"
        )));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("PCA input contains NaN/Inf".into()));
    }
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    if standardize {
        for mut col in centered.column_iter_mut() {
            let sd = (col.norm_squared() / (n - 1) as f64).sqrt();
            if sd > 0.0 {
                col /= sd;
            }
        }
    }
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    let eig = sym_eig(&cov)?;
    let scores = &centered * &eig.vectors;
    Ok((scores, eig.vectors, eig.values))
}

/// Largest absolute Pearson correlation between any score column and `y`.
/// Columns with no variance are skipped.
pub fn pc_max_corr(scores: &DMatrix<f64>, y: &[f64]) -> f64 {
    let mut best = 0.0_f64;
    for col in scores.column_iter() {
        let v: Vec<f64> = col.iter().cloned().collect();
        if let Some(c) = pearson(&v, y) {
            best = best.max(c.abs());
        }
    }
    best
}

/// Classical (Torgerson) multidimensional scaling to one dimension.
///
/// Builds the Euclidean distance matrix on the rows, double-centers the
/// squared distances (`B = -1/2 J D^2 J`), and returns `sqrt(d1) v1` for the
/// top eigenpair of `B`, sign-canonicalized. For large `n` the top pair is
/// found by power iteration on `B` instead of a full decomposition.
pub fn mds_embed_1d(data: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = data.nrows();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "MDS needs at least 3 rows, got {n}"
        )));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("MDS input contains NaN/Inf".into()));
    }

    let b = double_centered(data);
    let (top_value, mut top_vector) = if n <= MDS_DENSE_LIMIT {
        let eig = sym_eig(&b)?;
        (eig.values[0], eig.vectors.column(0).into_owned())
    } else {
        power_iteration_top(&b)?
    };
    canonicalize_sign(&mut top_vector);
    Ok(top_vector * top_value.max(0.0).sqrt())
}

/// `-1/2 J D^2 J` for the squared Euclidean distances of the rows.
fn double_centered(data: &DMatrix<f64>) -> DMatrix<f64> {
    let n = data.nrows();
    let sq_norms: Vec<f64> = data.row_iter().map(|r| r.norm_squared()).collect();
    let gram = data * data.transpose();
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = sq_norms[i] + sq_norms[j] - 2.0 * gram[(i, j)];
        }
    }
    let row_means: Vec<f64> = b.row_iter().map(|r| r.mean()).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = -0.5 * (b[(i, j)] - row_means[i] - row_means[j] + grand);
        }
    }
    (&b + b.transpose()) * 0.5
}

/// Top eigenpair of a symmetric PSD matrix by power iteration with a
/// deterministic start.
fn power_iteration_top(b: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let n = b.nrows();
    let mut v = DVector::from_fn(n, |i, _| {
        let x = (i as f64 + 1.0) * 0.754877666246693;
        (x - x.floor()) - 0.5
    });
    v /= v.norm();
    let mut value = 0.0;
    for iter in 0..2000 {
        let w = b * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok((0.0, v));
        }
        let next = w / norm;
        let new_value = (next.transpose() * b * &next)[(0, 0)];
        let converged = (next.clone() - &v).norm().min((next.clone() + &v).norm()) < 1e-13;
        v = next;
        value = new_value;
        if converged && iter > 2 {
            break;
        }
    }
    Ok((value, v))
}

/// Correlation summary of fused candidates against a latent vector.
#[derive(Debug, Clone)]
pub struct CorrReport {
    /// Absolute Pearson correlation of each named candidate with the latent.
    pub per_method: BTreeMap<String, f64>,
    /// Best single raw measurement: `max_k |corr(w_k, y)|`.
    pub rho_max: f64,
    /// Average over raw measurements: `K^-1 sum_k |corr(w_k, y)|`.
    pub rho_bar0: f64,
}

/// Compute `rho_max`, `rho_bar0`, and per-candidate absolute correlations.
pub fn corr_metrics(
    data: &DMatrix<f64>,
    candidates: &BTreeMap<String, DVector<f64>>,
    y: &[f64],
) -> Result<CorrReport> {
    let n = data.nrows();
    if y.len() != n || candidates.values().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch(
            "correlation inputs disagree on length".into(),
        ));
    }
    let mut rho_max = 0.0_f64;
    let mut rho_sum = 0.0;
    for k in 0..data.ncols() {
        let col: Vec<f64> = data.column(k).iter().cloned().collect();
        let c = pearson(&col, y)
            .ok_or_else(|| Error::ZeroVariance(format!("measurement column {k} or y constant")))?
            .abs();
        rho_max = rho_max.max(c);
        rho_sum += c;
    }
    let mut per_method = BTreeMap::new();
    for (name, cand) in candidates {
        let v: Vec<f64> = cand.iter().cloned().collect();
        let c = pearson(&v, y)
            .ok_or_else(|| Error::ZeroVariance(format!("candidate '{name}' or y constant")))?
            .abs();
        per_method.insert(name.clone(), c);
    }
    Ok(CorrReport {
        per_method,
        rho_max,
        rho_bar0: rho_sum / data.ncols() as f64,
    })
}
