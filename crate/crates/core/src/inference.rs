//! Plug-in asymptotics for the fitted fusion: influence-function samples for
//! the moment matrices, their joint second-moment blocks, the Jacobian
//! operators that propagate moment perturbations through the whitening and
//! the eigenvector extraction, and the resulting sandwich covariances and
//! prediction confidence intervals.
//!
//! Everything operates in the centered-contrast coordinates of the fit, where
//! the constraint matrix is positive definite. Writing `S` for the constraint
//! covariance, `L` for the disagreement scatter, `R = S^{-1/2} L S^{-1/2}`,
//! and `b` for the smallest-eigenvalue eigenvector of `R`:
//!
//! - the influence function of `L_n` is `N_i Q N_i^T - L_n`;
//! - the influence function of `S_n` is
//!   `z z^T - E(zz^T) - (z - zbar) zbar^T - zbar (z - zbar)^T`;
//! - `vec(R)` responds to moment perturbations through
//!   `-(S^{-1/2}L (x) I + I (x) S^{-1/2}L)(S (x) S^{1/2} + S^{1/2} (x) S)^{-1}`
//!   (covariance direction) and `S^{-1/2} (x) S^{-1/2}` (scatter direction);
//! - the eigenvector responds through `b^T (x) V (d_r I - G)^+ V^T` applied
//!   to the `vec(R)` response, and the coefficients `a = S^{-1/2} b` pick up
//!   an extra `-(b^T (x) I)(S (x) S^{1/2} + S^{1/2} (x) S)^{-1}` term.
//!
//! Sandwiching the empirical second moments of the influence samples between
//! those operators yields the asymptotic covariances of `vec(R_n)`, `b`, and
//! the coefficients, and finally the prediction variance of the fused value
//! at a new observation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fit::{assemble_moments, FittedBScaling, FusionInput, MomentPair};
use crate::linalg::{inv_sqrt_from_eig, kron, pinv_shifted_diag, sqrt_from_eig, sym_eig, EigenDecomp};
use crate::stats::normal_quantile;

/// Default cap on the contrast dimension for the influence machinery: the
/// second-moment blocks are `dim^2 x dim^2`.
pub const DEFAULT_DIM_GUARD: usize = 40;

/// Per-observation influence-function rows for the two moment estimators.
#[derive(Debug, Clone)]
pub struct InfluenceSamples {
    /// Contrast dimension `q`; both row matrices have `q^2` columns.
    pub dim: usize,
    /// Row `i` is `vec` of the covariance influence at observation `i`.
    pub cov_rows: DMatrix<f64>,
    /// Row `i` is `vec` of the scatter influence at observation `i`.
    pub scatter_rows: DMatrix<f64>,
}

/// Empirical second-moment blocks of the stacked influence samples, ordered
/// (covariance, scatter).
#[derive(Debug, Clone)]
pub struct PhiBlocks {
    pub cov_cov: DMatrix<f64>,
    pub cov_scatter: DMatrix<f64>,
    pub scatter_cov: DMatrix<f64>,
    pub scatter_scatter: DMatrix<f64>,
}

/// Jacobian operators propagating moment perturbations to `vec(R)`, to the
/// bottom eigenvector, and to the coefficient vector.
#[derive(Debug, Clone)]
pub struct OperatorMatrices {
    /// `d vec(R) / d vec(S)`, `q^2 x q^2`.
    pub dwhitened_dcov: DMatrix<f64>,
    /// `d vec(R) / d vec(L)`, `q^2 x q^2`.
    pub dwhitened_dscatter: DMatrix<f64>,
    /// `d b / d vec(S)`, `q x q^2`.
    pub deigvec_dcov: DMatrix<f64>,
    /// `d b / d vec(L)`, `q x q^2`.
    pub deigvec_dscatter: DMatrix<f64>,
    /// `d a / d vec(S)`, `q x q^2`.
    pub dcoefs_dcov: DMatrix<f64>,
    /// `d a / d vec(L)`, `q x q^2`.
    pub dcoefs_dscatter: DMatrix<f64>,
    /// Spectrum indices zeroed by the pseudo-inverse beyond the expected
    /// smallest eigenvalue: nonempty means a near-tie in the spectrum.
    pub extra_ties: Vec<usize>,
}

/// Everything needed to turn a fitted model into prediction intervals.
#[derive(Debug, Clone)]
pub struct AsymptoticModel {
    pub phi: PhiBlocks,
    pub ops: OperatorMatrices,
    /// Eigenvectors of the whitened scatter (contrast coordinates).
    pub eigvecs: DMatrix<f64>,
    /// Its spectrum, descending.
    pub eigvals: DVector<f64>,
    /// Asymptotic covariance of `sqrt(n) vec(R_n)`.
    pub whitened_cov: DMatrix<f64>,
    /// Asymptotic covariance of `sqrt(n) b_n`.
    pub eigvec_cov: DMatrix<f64>,
    /// Asymptotic covariance of `sqrt(n) a_n`.
    pub coef_cov: DMatrix<f64>,
    /// Sample size the moments were estimated from.
    pub n: usize,
}

/// A fused prediction with its asymptotic confidence interval.
#[derive(Debug, Clone, Copy)]
pub struct PredictionCI {
    pub mu_hat: f64,
    pub sigma_mu: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

fn contrast_pipeline(
    model: &FittedBScaling,
    input: &FusionInput,
) -> Result<(Vec<DMatrix<f64>>, MomentPair)> {
    if input.k() != model.k() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} measurements, input has {}",
            model.k(),
            input.k()
        )));
    }
    let designs = crate::fit::rescaled_designs(input, &model.rescale, &model.knots);
    let contrasts = crate::fit::contrast_designs(&designs, &model.basis_means);
    let moments = assemble_moments(&contrasts)?;
    Ok((contrasts, moments))
}

/// Recompute the contrast-coordinate moment matrices of a fitted model on a
/// dataset (the model's knots, rescaling, and basis centering are reused).
pub fn contrast_moments(model: &FittedBScaling, input: &FusionInput) -> Result<MomentPair> {
    contrast_pipeline(model, input).map(|(_, m)| m)
}

/// Influence-function rows of the two moment estimators at each observation,
/// evaluated in the model's contrast coordinates. Both matrices have exactly
/// zero column means by construction.
pub fn influence_samples(
    model: &FittedBScaling,
    input: &FusionInput,
) -> Result<InfluenceSamples> {
    let (contrasts, moments) = contrast_pipeline(model, input)?;
    Ok(influence_from_designs(&contrasts, &moments))
}

pub(crate) fn influence_from_designs(
    contrasts: &[DMatrix<f64>],
    moments: &MomentPair,
) -> InfluenceSamples {
    let kk = contrasts.len();
    let kf = kk as f64;
    let n = contrasts[0].nrows();
    let q = moments.dim();
    let offsets: Vec<usize> = {
        let mut o = Vec::with_capacity(kk + 1);
        let mut acc = 0;
        for c in contrasts {
            o.push(acc);
            acc += c.ncols();
        }
        o.push(acc);
        o
    };

    // E_n[z z^T] = cov + zbar zbar^T.
    let e_zz = &moments.mean_cov + &moments.z_bar * moments.z_bar.transpose();
    let z_bar = &moments.z_bar;

    let mut cov_rows = DMatrix::zeros(n, q * q);
    let mut scatter_rows = DMatrix::zeros(n, q * q);
    let mut z_i = DVector::zeros(q);
    for i in 0..n {
        for k in 0..kk {
            for j in 0..contrasts[k].ncols() {
                z_i[offsets[k] + j] = contrasts[k][(i, j)] / kf;
            }
        }
        let centered = &z_i - z_bar;
        let cov_star = &z_i * z_i.transpose()
            - &e_zz
            - &centered * z_bar.transpose()
            - z_bar * centered.transpose();

        let mut scatter_star = -moments.within_scatter.clone();
        for k in 0..kk {
            for l in 0..kk {
                let qkl = if k == l { 1.0 - 1.0 / kf } else { -1.0 / kf };
                for b in 0..contrasts[l].ncols() {
                    let gb = contrasts[l][(i, b)] * qkl;
                    if gb == 0.0 {
                        continue;
                    }
                    for a in 0..contrasts[k].ncols() {
                        scatter_star[(offsets[k] + a, offsets[l] + b)] +=
                            contrasts[k][(i, a)] * gb;
                    }
                }
            }
        }

        cov_rows.row_mut(i).copy_from_slice(cov_star.as_slice());
        scatter_rows
            .row_mut(i)
            .copy_from_slice(scatter_star.as_slice());
    }

    InfluenceSamples {
        dim: q,
        cov_rows,
        scatter_rows,
    }
}

/// Empirical second-moment blocks of the stacked influence rows.
///
/// Refuses to build the `2 q^2` square system above the dimension guard
/// (default 40): the blocks grow with the fourth power of the contrast
/// dimension.
pub fn estimate_phi(samples: &InfluenceSamples, max_dim: Option<usize>) -> Result<PhiBlocks> {
    let limit = max_dim.unwrap_or(DEFAULT_DIM_GUARD);
    if samples.dim > limit {
        return Err(Error::MemoryBudget(format!(
            "contrast dimension {} exceeds the inference guard {limit}; \
             raise the limit explicitly to proceed",
            samples.dim
        )));
    }
    let n = samples.cov_rows.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(
            "need at least 2 influence rows".into(),
        ));
    }
    let nf = n as f64;
    let cov_cov = samples.cov_rows.tr_mul(&samples.cov_rows) / nf;
    let scatter_scatter = samples.scatter_rows.tr_mul(&samples.scatter_rows) / nf;
    let scatter_cov = samples.scatter_rows.tr_mul(&samples.cov_rows) / nf;
    let cov_scatter = scatter_cov.transpose();
    Ok(PhiBlocks {
        cov_cov,
        cov_scatter,
        scatter_cov,
        scatter_scatter,
    })
}

/// Jacobian operators at the fitted moments.
///
/// `eig` must be the eigendecomposition of the whitened scatter
/// `R = S^{-1/2} L S^{-1/2}` and `b_hat` its smallest-eigenvalue eigenvector
/// (either sign). Fails when the symmetrized Kronecker system
/// `S (x) S^{1/2} + S^{1/2} (x) S` is conditioned worse than 1e12.
pub fn asymptotic_operators(
    moments: &MomentPair,
    eig: &EigenDecomp,
    b_hat: &DVector<f64>,
) -> Result<OperatorMatrices> {
    let q = moments.dim();
    if eig.values.len() != q || b_hat.len() != q {
        return Err(Error::DimensionMismatch(
            "eigendecomposition does not match the moment dimension".into(),
        ));
    }
    let cov_eig = sym_eig(&moments.mean_cov)?;
    // Eigenvalues of the Kronecker system are d_i sqrt(d_j) + sqrt(d_i) d_j;
    // its condition exceeds 1e12 exactly when cond(S)^{3/2} does.
    let d_max = cov_eig.values[0];
    let d_min = cov_eig.values[q - 1];
    if !(d_min > 0.0) || (d_max / d_min).powf(1.5) > 1e12 {
        return Err(Error::SingularMatrix(format!(
            "whitening system ill-conditioned: constraint eigenvalues span [{d_min:.3e}, {d_max:.3e}]"
        )));
    }
    let s_half = sqrt_from_eig(&cov_eig);
    let s_inv_half = inv_sqrt_from_eig(&cov_eig)?;

    let big = kron(&moments.mean_cov, &s_half) + kron(&s_half, &moments.mean_cov);
    let big_inv = big
        .cholesky()
        .ok_or_else(|| Error::SingularMatrix("whitening system not positive definite".into()))?
        .inverse();

    let sl = &s_inv_half * &moments.within_scatter;
    let eye = DMatrix::identity(q, q);
    let sum_kron = kron(&sl, &eye) + kron(&eye, &sl);
    let dwhitened_dcov = -(&sum_kron * &big_inv);
    let dwhitened_dscatter = kron(&s_inv_half, &s_inv_half);

    // Pseudo-inverse of (d_r I - Gamma) applied through the eigenbasis.
    let d_r = eig.values[q - 1];
    let (pinv_diag, zeroed) = pinv_shifted_diag(d_r, &eig.values);
    let extra_ties: Vec<usize> = zeroed.into_iter().filter(|&j| j != q - 1).collect();
    let mut scaled = eig.vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= pinv_diag[j];
    }
    let shrink = &scaled * eig.vectors.transpose();

    let b_mat = DMatrix::from_fn(1, q, |_, j| b_hat[j]);
    let eigvec_response = kron(&b_mat, &shrink); // q x q^2

    let deigvec_dcov = &eigvec_response * &dwhitened_dcov;
    let deigvec_dscatter = &eigvec_response * &dwhitened_dscatter;

    let dcoefs_dcov = -(kron(&b_mat, &eye) * &big_inv) + &s_inv_half * &deigvec_dcov;
    let dcoefs_dscatter = &s_inv_half * &deigvec_dscatter;

    Ok(OperatorMatrices {
        dwhitened_dcov,
        dwhitened_dscatter,
        deigvec_dcov,
        deigvec_dscatter,
        dcoefs_dcov,
        dcoefs_dscatter,
        extra_ties,
    })
}

fn sandwich(
    left_cov: &DMatrix<f64>,
    left_scatter: &DMatrix<f64>,
    phi: &PhiBlocks,
) -> DMatrix<f64> {
    let out = left_cov * &phi.cov_cov * left_cov.transpose()
        + left_cov * &phi.cov_scatter * left_scatter.transpose()
        + left_scatter * &phi.scatter_cov * left_cov.transpose()
        + left_scatter * &phi.scatter_scatter * left_scatter.transpose();
    (&out + out.transpose()) * 0.5
}

/// The three sandwich covariances: of `vec(R_n)`, of the eigenvector, and of
/// the coefficients (each scaled for `sqrt(n)` convergence).
pub fn covariances(
    ops: &OperatorMatrices,
    phi: &PhiBlocks,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let whitened_cov = sandwich(&ops.dwhitened_dcov, &ops.dwhitened_dscatter, phi);
    let eigvec_cov = sandwich(&ops.deigvec_dcov, &ops.deigvec_dscatter, phi);
    let coef_cov = sandwich(&ops.dcoefs_dcov, &ops.dcoefs_dscatter, phi);
    (whitened_cov, eigvec_cov, coef_cov)
}

/// Build the full asymptotic model for a fit: recompute the contrast moments
/// on `input`, estimate the influence second moments, and sandwich them
/// through the Jacobians.
pub fn fit_asymptotics(
    model: &FittedBScaling,
    input: &FusionInput,
    max_dim: Option<usize>,
) -> Result<AsymptoticModel> {
    if model.dropped_directions > 0 {
        return Err(Error::SingularMatrix(
            "inference is not supported for fits with a truncated constraint matrix".into(),
        ));
    }
    let (contrasts, moments) = contrast_pipeline(model, input)?;
    let limit = max_dim.unwrap_or(DEFAULT_DIM_GUARD);
    if moments.dim() > limit {
        return Err(Error::MemoryBudget(format!(
            "contrast dimension {} exceeds the inference guard {limit}",
            moments.dim()
        )));
    }

    let cov_eig = sym_eig(&moments.mean_cov)?;
    let s_inv_half = inv_sqrt_from_eig(&cov_eig)?;
    let whitened = &s_inv_half * &moments.within_scatter * &s_inv_half;
    let whitened = (&whitened + whitened.transpose()) * 0.5;
    let eig = sym_eig(&whitened)?;
    let b_hat = eig.vectors.column(moments.dim() - 1).into_owned();

    let samples = influence_from_designs(&contrasts, &moments);
    let phi = estimate_phi(&samples, Some(limit))?;
    let ops = asymptotic_operators(&moments, &eig, &b_hat)?;
    let (whitened_cov, eigvec_cov, coef_cov) = covariances(&ops, &phi);

    Ok(AsymptoticModel {
        phi,
        ops,
        eigvecs: eig.vectors,
        eigvals: eig.values,
        whitened_cov,
        eigvec_cov,
        coef_cov,
        n: input.n(),
    })
}

/// Fused prediction at a new observation with its asymptotic confidence
/// interval: `mu_hat +/- z * sigma_mu / sqrt(n)`.
pub fn sigma_mu_ci(
    model: &FittedBScaling,
    asy: &AsymptoticModel,
    w_new: &[f64],
    level: f64,
) -> Result<PredictionCI> {
    if w_new.len() != model.k() {
        return Err(Error::DimensionMismatch(format!(
            "new observation has {} entries, model expects {}",
            w_new.len(),
            model.k()
        )));
    }
    if w_new.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("new observation contains NaN/Inf".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence level must be in (0,1), got {level}"
        )));
    }

    let kf = model.k() as f64;
    let stacked = model.stacked_basis(w_new);
    let mu_hat = model.coefs.dot(&stacked) / kf;

    let contrast = model.contrast_basis(w_new);
    let mut var = (contrast.transpose() * &asy.coef_cov * &contrast)[(0, 0)] / (kf * kf);
    if var < -1e-10 {
        return Err(Error::NegativeVariance(format!(
            "prediction variance {var:.3e}"
        )));
    }
    var = var.max(0.0);
    let sigma_mu = var.sqrt();

    let z = normal_quantile(0.5 + level / 2.0);
    let half = z * sigma_mu / (asy.n as f64).sqrt();
    Ok(PredictionCI {
        mu_hat,
        sigma_mu,
        level,
        lower: mu_hat - half,
        upper: mu_hat + half,
    })
}

/// Convenience wrapper: asymptotics plus interval in one call.
pub fn prediction_interval(
    model: &FittedBScaling,
    input: &FusionInput,
    w_new: &[f64],
    level: f64,
    max_dim: Option<usize>,
) -> Result<PredictionCI> {
    let asy = fit_asymptotics(model, input, max_dim)?;
    sigma_mu_ci(model, &asy, w_new, level)
}
