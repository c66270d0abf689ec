//! Dense symmetric linear-algebra kernels: eigendecomposition with a
//! deterministic ordering and sign convention, PSD inverse square roots,
//! Kronecker products, and the vec operator.
//!
//! Everything here works on matrices of at most a few hundred rows, so dense
//! `O(r^3)` algorithms are used throughout.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and a canonical eigenvector sign (the largest-magnitude
/// component of each column is positive; ties resolved toward the lowest
/// index).
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    /// Eigenvalues, descending: `values[0] >= ... >= values[r-1]`.
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors; column `j` pairs with `values[j]`.
    pub vectors: DMatrix<f64>,
}

impl EigenDecomp {
    /// Reconstruct the decomposed matrix `V diag(d) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = {
            let mut m = self.vectors.clone();
            for (j, mut col) in m.column_iter_mut().enumerate() {
                col *= self.values[j];
            }
            m
        };
        &scaled * self.vectors.transpose()
    }
}

/// Flip the sign of `v` so its largest-magnitude entry is positive.
/// Ties in magnitude resolve to the lowest index. Returns the sign applied.
pub(crate) fn canonicalize_sign(v: &mut DVector<f64>) -> f64 {
    let mut idx = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        let a = x.abs();
        if a > best {
            best = a;
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        *v = -&*v;
        -1.0
    } else {
        1.0
    }
}

/// Full spectrum of a symmetric matrix.
///
/// The input is symmetrized as `(S + S^T)/2` before decomposition, eigenvalues
/// are returned in descending order, and each eigenvector is sign-canonicalized
/// so results are deterministic across runs.
///
/// The decomposition is the classical Householder tridiagonalization followed
/// by implicit-shift QL iteration with accumulated rotations.
pub fn sym_eig(s: &DMatrix<f64>) -> Result<EigenDecomp> {
    if s.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "sym_eig needs a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sym_eig input contains NaN/Inf".into()));
    }
    let sym = (s + s.transpose()) * 0.5;
    let (raw_values, raw_vectors) = tridiagonal_eigen(sym)?;

    let r = raw_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        raw_values[b]
            .partial_cmp(&raw_values[a])
            .expect("finite eigenvalues")
    });

    let mut values = DVector::zeros(r);
    let mut vectors = DMatrix::zeros(r, r);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = raw_values[src];
        let mut col = raw_vectors.column(src).into_owned();
        canonicalize_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok(EigenDecomp { values, vectors })
}

/// Householder reduction of a symmetric matrix to tridiagonal form with the
/// orthogonal transformation accumulated in place (EISPACK `tred2`), followed
/// by implicit-shift QL iteration on the tridiagonal (EISPACK `tql2`).
/// Returns unordered eigenvalues with matching eigenvector columns.
fn tridiagonal_eigen(mut v: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = v.nrows();
    if n == 0 {
        return Ok((Vec::new(), v));
    }
    let mut d = vec![0.0_f64; n];
    let mut e = vec![0.0_f64; n];

    // Householder reduction.
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for item in d.iter_mut().take(i) {
                *item /= scale;
                h += *item * *item;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let adj = f * e[k] + g * d[k];
                    v[(k, j)] -= adj;
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    // Accumulate transformations.
    for i in 0..n.saturating_sub(1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    let adj = g * d[k];
                    v[(k, j)] -= adj;
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;

    // Implicit-shift QL iteration.
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0_f64;
    let mut tst1 = 0.0_f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iterations = 0;
            loop {
                iterations += 1;
                if iterations > 100 {
                    return Err(Error::SingularMatrix(
                        "symmetric eigensolver failed to converge".into(),
                    ));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0_f64;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0_f64;
                let mut s2 = 0.0_f64;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[(k, i + 1)];
                        v[(k, i + 1)] = s * v[(k, i)] + c * h;
                        v[(k, i)] = c * v[(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok((d, v))
}

/// `V diag(f(d_j)) V^T` for an already-computed decomposition.
fn apply_spectral(eig: &EigenDecomp, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = eig.vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(eig.values[j]);
    }
    &scaled * eig.vectors.transpose()
}

/// Symmetric square root from an existing decomposition of a PSD matrix.
pub(crate) fn sqrt_from_eig(eig: &EigenDecomp) -> DMatrix<f64> {
    apply_spectral(eig, |d| d.max(0.0).sqrt())
}

/// Inverse symmetric square root from an existing decomposition.
/// Fails if the smallest eigenvalue is not safely positive.
pub(crate) fn inv_sqrt_from_eig(eig: &EigenDecomp) -> Result<DMatrix<f64>> {
    let r = eig.values.len();
    let largest = eig.values[0].max(0.0);
    let smallest = eig.values[r - 1];
    if smallest <= 1e-14 * largest || smallest <= 0.0 {
        return Err(Error::SingularMatrix(format!(
            "inverse square root: smallest eigenvalue {smallest:.3e} vs largest {largest:.3e}"
        )));
    }
    Ok(apply_spectral(eig, |d| 1.0 / d.sqrt()))
}

/// Inverse square root of a symmetric PSD matrix.
///
/// A relative ridge `ridge * tr(S)/r` is added to the diagonal before the
/// decomposition (pass 0 for none). The result `M` satisfies `M S M = I` when
/// no ridge is applied.
pub fn inv_sqrt_psd(s: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let r = s.nrows();
    let shift = if ridge > 0.0 {
        ridge * s.trace() / r as f64
    } else {
        0.0
    };
    let mut eig = sym_eig(s)?;
    if shift > 0.0 {
        eig.values.add_scalar_mut(shift);
    }
    inv_sqrt_from_eig(&eig)
}

/// Kronecker product, standard block layout: entry `((i*s + k), (j*t + l))`
/// of the result is `a[(i, j)] * b[(k, l)]`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = a.shape();
    let (s, t) = b.shape();
    let mut out = DMatrix::zeros(p * s, q * t);
    for j in 0..q {
        for i in 0..p {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for l in 0..t {
                for k in 0..s {
                    out[(i * s + k, j * t + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Column-stacking vec operator.
pub fn vec_mat(a: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra stores matrices column-major, so the raw slice is already vec(A).
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec_mat`]: reshape a length `rows*cols` vector column-major.
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Moore-Penrose inverse of the shifted diagonal `(d I - Gamma)`.
///
/// Entry `j` is `1/(d - gamma[j])` when `|d - gamma[j]|` exceeds
/// `1e-10 * max|gamma|`, and 0 otherwise (the pseudo-inverse zeroes singular
/// directions). Returns the diagonal together with the indices that were
/// zeroed; the caller expects exactly one (the eigenvalue equal to `d`), and
/// any extra entry signals a near-tie in the spectrum.
pub fn pinv_shifted_diag(d: f64, gamma: &DVector<f64>) -> (DVector<f64>, Vec<usize>) {
    let tol = 1e-10 * gamma.iter().fold(0.0_f64, |m, &g| m.max(g.abs()));
    let mut out = DVector::zeros(gamma.len());
    let mut zeroed = Vec::new();
    for (j, &g) in gamma.iter().enumerate() {
        let gap = d - g;
        if gap.abs() > tol {
            out[j] = 1.0 / gap;
        } else {
            zeroed.push(j);
        }
    }
    (out, zeroed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn random_spd(r: usize, seed: u64) -> DMatrix<f64> {
        // Deterministic pseudo-random SPD matrix: A^T A + I/2.
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a = DMatrix::from_fn(r, r, |_, _| next());
        a.transpose() * &a + DMatrix::identity(r, r) * 0.5
    }

    #[test]
    fn identity_spectrum() {
        let eig = sym_eig(&DMatrix::identity(3, 3)).unwrap();
        for j in 0..3 {
            assert!((eig.values[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_canonical_signs() {
        let eig = sym_eig(&dmatrix![4.0, 0.0; 0.0, 1.0]).unwrap();
        assert!((eig.values[0] - 4.0).abs() < 1e-12);
        assert!((eig.values[1] - 1.0).abs() < 1e-12);
        // Canonical sign makes the columns +e1 and +e2.
        assert!((eig.vectors[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((eig.vectors[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_hand_check() {
        // [[2,1],[1,2]] has characteristic polynomial (2-d)^2 - 1, so d = 3, 1,
        // with eigenvectors (1,1)/sqrt(2) and (1,-1)/sqrt(2) after the sign
        // convention (tied magnitudes resolve to a positive first entry).
        let eig = sym_eig(&dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-12);
        assert!((eig.values[1] - 1.0).abs() < 1e-12);
        let s = 0.5_f64.sqrt();
        assert!((eig.vectors[(0, 0)] - s).abs() < 1e-10);
        assert!((eig.vectors[(1, 0)] - s).abs() < 1e-10);
        assert!((eig.vectors[(0, 1)] - s).abs() < 1e-10);
        assert!((eig.vectors[(1, 1)] + s).abs() < 1e-10);
    }

    #[test]
    fn eig_orthonormal_and_reconstructs() {
        for seed in 0..5 {
            let s = random_spd(6, seed);
            let eig = sym_eig(&s).unwrap();
            let vtv = eig.vectors.transpose() * &eig.vectors;
            assert!((vtv - DMatrix::identity(6, 6)).norm() < 1e-10);
            let rel = (eig.reconstruct() - &s).norm() / s.norm();
            assert!(rel < 1e-8, "reconstruction error {rel}");
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut s = DMatrix::identity(2, 2);
        s[(0, 1)] = f64::NAN;
        assert!(matches!(sym_eig(&s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn eigen_pairs_stay_consistent() {
        // Every returned column must actually be an eigenvector of its
        // eigenvalue, including for badly scaled congruence products
        // W^T A W with ill-conditioned W.
        let mut state = 0xfeed_f00du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for trial in 0..50 {
            let n = 2 + (trial % 24);
            let a = DMatrix::from_fn(n, n, |_, _| next());
            let a = (&a + a.transpose()) * 0.5;
            // Ill-conditioned congruence for odd trials.
            let s = if trial % 2 == 1 {
                let w = DMatrix::from_fn(n, n, |i, j| {
                    next() * 10f64.powi(-((i + j) as i32 % 7))
                });
                w.transpose() * &a * &w
            } else {
                a
            };
            let s = (&s + s.transpose()) * 0.5;
            let eig = sym_eig(&s).unwrap();
            let scale = s.amax().max(1e-300);
            let vtv = eig.vectors.tr_mul(&eig.vectors);
            assert!(
                (vtv - DMatrix::identity(n, n)).amax() < 1e-12,
                "trial {trial}: eigenvectors not orthonormal"
            );
            for j in 0..n {
                let v = eig.vectors.column(j).into_owned();
                let resid = (&s * &v - &v * eig.values[j]).amax();
                assert!(
                    resid < 1e-10 * scale,
                    "trial {trial}, column {j}: residual {resid:.3e} vs scale {scale:.3e}"
                );
            }
        }
    }

    #[test]
    fn inv_sqrt_identity_and_diagonal() {
        let m = inv_sqrt_psd(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert!((m - DMatrix::identity(3, 3)).norm() < 1e-12);

        let m = inv_sqrt_psd(&dmatrix![4.0, 0.0; 0.0, 9.0], 0.0).unwrap();
        assert!((m[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((m[(1, 1)] - 1.0 / 3.0).abs() < 1e-12);
        assert!(m[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn inv_sqrt_msm_is_identity() {
        for seed in 10..15 {
            let s = random_spd(3, seed);
            let m = inv_sqrt_psd(&s, 0.0).unwrap();
            let msm = &m * &s * &m;
            assert!((msm - DMatrix::identity(3, 3)).norm() < 1e-8);
        }
    }

    #[test]
    fn inv_sqrt_commutes_with_input() {
        for seed in 20..25 {
            let s = random_spd(4, seed);
            let m = inv_sqrt_psd(&s, 0.0).unwrap();
            assert!((&m * &s - &s * &m).norm() < 1e-8);
        }
    }

    #[test]
    fn inv_sqrt_singular_rejected() {
        let s = dmatrix![1.0, 0.0; 0.0, 0.0];
        assert!(matches!(
            inv_sqrt_psd(&s, 0.0),
            Err(Error::SingularMatrix(_))
        ));
        // A ridge rescues it.
        assert!(inv_sqrt_psd(&s, 1e-2).is_ok());
    }

    #[test]
    fn kron_identity_blockdiag() {
        let a = dmatrix![1.0, 2.0; 3.0, 4.0];
        let k = kron(&DMatrix::identity(2, 2), &a);
        assert_eq!(k.nrows(), 4);
        assert!((k.view((0, 0), (2, 2)).clone_owned() - &a).norm() < 1e-15);
        assert!((k.view((2, 2), (2, 2)).clone_owned() - &a).norm() < 1e-15);
        assert!(k.view((0, 2), (2, 2)).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn kron_mixed_product_identity() {
        // (A (x) B)(C (x) D) = (AC) (x) (BD), checked by direct multiplication.
        for seed in 30..35 {
            let a = random_spd(2, seed);
            let b = random_spd(2, seed + 100);
            let c = random_spd(2, seed + 200);
            let d = random_spd(2, seed + 300);
            let lhs = kron(&a, &b) * kron(&c, &d);
            let rhs = kron(&(&a * &c), &(&b * &d));
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn kron_vec_chain_identity() {
        // vec(A B C) = (C^T (x) A) vec(B), checked elementwise.
        for seed in 40..45 {
            let a = random_spd(2, seed);
            let b = random_spd(2, seed + 100);
            let c = random_spd(2, seed + 200);
            let lhs = vec_mat(&(&a * &b * &c));
            let rhs = kron(&c.transpose(), &a) * vec_mat(&b);
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn vec_column_major_and_roundtrip() {
        let a = dmatrix![1.0, 3.0; 2.0, 4.0];
        let v = vec_mat(&a);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0]);

        let col = DMatrix::from_column_slice(3, 1, &[5.0, 6.0, 7.0]);
        assert_eq!(vec_mat(&col).as_slice(), &[5.0, 6.0, 7.0]);

        let back = unvec(&v, 2, 2);
        assert_eq!(back, a);
    }

    #[test]
    fn pinv_shifted_examples() {
        let (p, zeroed) = pinv_shifted_diag(1.0, &DVector::from_vec(vec![3.0, 2.0, 1.0]));
        assert!((p[0] + 0.5).abs() < 1e-15);
        assert!((p[1] + 1.0).abs() < 1e-15);
        assert_eq!(p[2], 0.0);
        assert_eq!(zeroed, vec![2]);

        // Gamma = d I zeroes everything.
        let (p, zeroed) = pinv_shifted_diag(2.0, &DVector::from_vec(vec![2.0, 2.0]));
        assert!(p.iter().all(|&x| x == 0.0));
        assert_eq!(zeroed.len(), 2);
    }

    #[test]
    fn pinv_shifted_near_tie_flagged() {
        // A gap below 1e-10 * max|gamma| counts as a tie and is zeroed.
        let gamma = DVector::from_vec(vec![5.0, 1.0 + 2e-11, 1.0]);
        let (p, zeroed) = pinv_shifted_diag(1.0, &gamma);
        assert_eq!(zeroed, vec![1, 2]);
        assert!(p[1] == 0.0 && p[2] == 0.0);
        assert!((p[0] + 0.25).abs() < 1e-12);
    }
}
