//! Fitting the fusion model: rescaling, moment assembly, the generalized
//! eigenvalue solve, prediction, B-variance, and knot-count selection.
//!
//! For coefficient vector `A = (A_1, ..., A_K)` the disagreement objective is
//! `A^T L A`, where `L` averages `N_i Q N_i^T` over observations (`N_i` is the
//! block-diagonal matrix of per-measurement basis columns and
//! `Q = I - 11^T/K` centers across measurements). The constraint fixes the
//! variance of the fused average `z_i = N_i 1 / K` to one: `A^T S A = 1` with
//! `S = var(z)`. Whitening with `S^{-1/2}` turns this into an ordinary
//! symmetric eigenproblem whose smallest-eigenvalue eigenvector gives the
//! optimal transforms.
//!
//! One structural subtlety: because each measurement's basis is a partition of
//! unity, the constant function lies in every block's span, so `S` always has
//! K zero eigenvalues (per-measurement constant offsets have zero variance)
//! and a naive whitening is impossible. Constant offsets are pure gauge for
//! the fused representation, so the solve runs on centered basis functions
//! compressed by fixed orthonormal contrasts that exclude the constant from
//! each block. On that quotient the constraint matrix is positive definite for
//! non-degenerate data, and the solution maps back to full-basis coefficients
//! (with each fitted transform centered to mean zero on the training sample)
//! without changing the objective value, the constraint value, or any fused
//! prediction by more than a constant.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{canonicalize_sign, sym_eig};
use crate::spline::{basis_design, make_quantile_knots, KnotSet};

/// Relative eigenvalue gap below which the smallest eigenvalues are treated
/// as tied (warning plus deterministic tie resolution).
const TIE_TOL: f64 = 1e-10;

/// Absolute objective level treated as exact agreement. The constraint fixes
/// the fused values to unit variance, so eigenvalues measure disagreement on
/// a fixed scale and anything this small is numerically zero.
const ZERO_OBJECTIVE: f64 = 1e-10;

/// Hard cap on the constraint matrix condition number: eigendirections below
/// `max eigenvalue / 1e12` are never used for whitening.
const COND_LIMIT: f64 = 1e12;

/// Observations of the K measurements: rows are samples, columns are the
/// individual measurement sources.
#[derive(Debug, Clone)]
pub struct FusionInput {
    data: DMatrix<f64>,
    column_names: Vec<String>,
}

impl FusionInput {
    pub fn new(data: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        if data.nrows() < 2 || data.ncols() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 rows and 2 measurement columns, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if column_names.len() != data.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} columns",
                column_names.len(),
                data.ncols()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("input data contains NaN/Inf".into()));
        }
        Ok(Self { data, column_names })
    }

    /// Columns named `w1, w2, ...`.
    pub fn unnamed(data: DMatrix<f64>) -> Result<Self> {
        let names = (1..=data.ncols()).map(|k| format!("w{k}")).collect();
        Self::new(data, names)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn k(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.data.column(k).iter().cloned().collect()
    }
}

/// Per-column training min/max used to map measurements onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaleParams {
    bounds: Vec<(f64, f64)>,
}

impl RescaleParams {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::DegenerateMeasurement(format!(
                    "column {k}: invalid rescale bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { bounds })
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Map a raw value onto the training scale. Values outside the training
    /// range land outside `[0, 1]` here and are clamped at basis evaluation.
    pub fn apply(&self, col: usize, x: f64) -> f64 {
        let (lo, hi) = self.bounds[col];
        (x - lo) / (hi - lo)
    }

    pub fn apply_column(&self, col: usize, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(col, x)).collect()
    }
}

/// Learn per-column min/max. Constant columns are rejected.
pub fn fit_rescaler(input: &FusionInput) -> Result<RescaleParams> {
    let mut bounds = Vec::with_capacity(input.k());
    for k in 0..input.k() {
        let col = input.data.column(k);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::DegenerateMeasurement(format!(
                "column '{}' is constant",
                input.column_names[k]
            )));
        }
        bounds.push((lo, hi));
    }
    RescaleParams::new(bounds)
}

/// The measurement-centering projector `Q = I - 11^T/K`.
pub fn centering_matrix(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - 1.0 / k as f64
    })
}

/// Orthonormal contrasts spanning the complement of the constant vector in
/// `R^l`: an `l x (l-1)` matrix with orthonormal columns, each orthogonal to
/// the all-ones vector (Helmert construction).
pub(crate) fn constant_complement(l: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(l, l.saturating_sub(1));
    for j in 1..l {
        let norm = (j as f64 * (j + 1) as f64).sqrt();
        for i in 0..j {
            h[(i, j - 1)] = 1.0 / norm;
        }
        h[(j, j - 1)] = -(j as f64) / norm;
    }
    h
}

/// Sample moment matrices of the eigenproblem.
#[derive(Debug, Clone)]
pub struct MomentPair {
    /// Average of `N_i Q N_i^T`: the disagreement scatter of the transformed
    /// measurements around their per-observation mean.
    pub within_scatter: DMatrix<f64>,
    /// Covariance (n divisor) of the stacked average `z_i = N_i 1 / K`.
    pub mean_cov: DMatrix<f64>,
    /// Sample mean of `z_i`.
    pub z_bar: DVector<f64>,
}

impl MomentPair {
    pub fn dim(&self) -> usize {
        self.within_scatter.nrows()
    }
}

/// Block offsets of each measurement's coefficients in the stacked vectors.
fn block_offsets(designs: &[DMatrix<f64>]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(designs.len() + 1);
    let mut acc = 0;
    for d in designs {
        offsets.push(acc);
        acc += d.ncols();
    }
    offsets.push(acc);
    offsets
}

/// Assemble the moment matrices from per-measurement design matrices.
///
/// Block `(k, l)` of the scatter is `(d_kl - 1/K) B_k^T B_l / n`; the
/// block-diagonal structure of `N_i` is exploited so the stacked matrices are
/// never materialized.
pub fn assemble_moments(designs: &[DMatrix<f64>]) -> Result<MomentPair> {
    let kk = designs.len();
    if kk < 2 {
        return Err(Error::DimensionMismatch(
            "need at least two design matrices".into(),
        ));
    }
    let n = designs[0].nrows();
    if designs.iter().any(|d| d.nrows() != n) {
        return Err(Error::DimensionMismatch(
            "design matrices disagree on the number of rows".into(),
        ));
    }
    let offsets = block_offsets(designs);
    let total = offsets[kk];
    let kf = kk as f64;

    let mut scatter = DMatrix::zeros(total, total);
    for k in 0..kk {
        for l in k..kk {
            let q = if k == l { 1.0 - 1.0 / kf } else { -1.0 / kf };
            let block = designs[k].tr_mul(&designs[l]) * (q / n as f64);
            scatter
                .view_mut((offsets[k], offsets[l]), block.shape())
                .copy_from(&block);
            if l != k {
                scatter
                    .view_mut((offsets[l], offsets[k]), (block.ncols(), block.nrows()))
                    .copy_from(&block.transpose());
            }
        }
    }
    let scatter = (&scatter + scatter.transpose()) * 0.5;

    // Stacked averages z_i as rows, then the centered Gram matrix.
    let mut z = DMatrix::zeros(n, total);
    for k in 0..kk {
        z.view_mut((0, offsets[k]), designs[k].shape())
            .copy_from(&(&designs[k] / kf));
    }
    let z_bar = DVector::from_fn(total, |j, _| z.column(j).mean());
    for mut row in z.row_iter_mut() {
        row -= z_bar.transpose();
    }
    let cov = z.tr_mul(&z) / n as f64;
    let cov = (&cov + cov.transpose()) * 0.5;

    Ok(MomentPair {
        within_scatter: scatter,
        mean_cov: cov,
        z_bar,
    })
}

/// Knobs for [`fit_bscaling_with`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Number of knot intervals before deduplication.
    pub k0: usize,
    /// Spline order `m`.
    pub order: usize,
    /// Variance floor for the constraint matrix, relative to its mean
    /// eigenvalue: directions with less variance are excluded from the
    /// eigenproblem instead of being amplified by the whitening. Pass 0 to
    /// fail on a degenerate constraint matrix instead.
    pub ridge: f64,
    /// Use these knot sets instead of fitting quantile knots.
    pub fixed_knots: Option<Vec<KnotSet>>,
    /// Use these rescale bounds instead of the training min/max.
    pub fixed_rescale: Option<RescaleParams>,
    /// Center the basis at these means instead of the training column means
    /// of the design matrices (one vector per measurement).
    pub fixed_basis_means: Option<Vec<DVector<f64>>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            k0: 11,
            order: 4,
            ridge: 1e-8,
            fixed_knots: None,
            fixed_rescale: None,
            fixed_basis_means: None,
        }
    }
}

/// A fitted fusion model.
#[derive(Debug, Clone)]
pub struct FittedBScaling {
    pub column_names: Vec<String>,
    pub rescale: RescaleParams,
    pub order: usize,
    /// Per-measurement knot sets (basis sizes may differ after deduplication).
    pub knots: Vec<KnotSet>,
    /// Full-basis coefficient block offsets; `offsets[K]` is the stacked
    /// dimension.
    pub offsets: Vec<usize>,
    /// Full-basis spline coefficients of the optimal transforms (stacked
    /// blocks); each fitted transform has mean zero over the training sample.
    pub coefs: DVector<f64>,
    /// Training mean of each measurement's basis vector (the centering used
    /// by the contrast parametrization).
    pub basis_means: Vec<DVector<f64>>,
    /// Coefficients in the centered-contrast parametrization.
    pub contrast_coefs: DVector<f64>,
    /// Unit eigenvector of the whitened scatter, expressed in the ambient
    /// contrast coordinates.
    pub whitened_coefs: DVector<f64>,
    /// Spectrum of the whitened scatter on the contrast space, descending.
    pub eigenvalues: DVector<f64>,
    /// Smallest eigenvalue: the attained disagreement objective.
    pub min_eigenvalue: f64,
    /// Aggregate B-variance on the training data.
    pub b_variance: f64,
    /// Sign applied to canonicalize the coefficients (+1 or -1).
    pub sign: f64,
    /// Training sample size.
    pub n: usize,
    /// The variance floor the fit was run with.
    pub ridge: f64,
    /// Number of constraint-matrix directions excluded for lack of variance.
    pub dropped_directions: usize,
    pub warnings: Vec<String>,
}

impl FittedBScaling {
    pub fn k(&self) -> usize {
        self.knots.len()
    }

    /// Stacked full-basis dimension (sum of per-measurement basis counts).
    pub fn total_basis(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Full-basis coefficient block of measurement `k`.
    pub fn coef_block(&self, k: usize) -> DVector<f64> {
        self.coefs
            .rows(self.offsets[k], self.offsets[k + 1] - self.offsets[k])
            .into_owned()
    }

    /// Stacked full basis vector at one raw observation row (rescaled and
    /// clamped per measurement). Length `total_basis()`.
    pub fn stacked_basis(&self, row: &[f64]) -> DVector<f64> {
        assert_eq!(row.len(), self.k(), "row length must equal K");
        let mut out = DVector::zeros(self.total_basis());
        for k in 0..self.k() {
            let x = self.rescale.apply(k, row[k]);
            let l = self.knots[k].basis_count();
            let mut buf = vec![0.0; l];
            self.knots[k].eval_into(x, &mut buf);
            for (j, &v) in buf.iter().enumerate() {
                out[self.offsets[k] + j] = v;
            }
        }
        out
    }

    /// Stacked centered-contrast basis vector at one raw observation row.
    /// This is the coordinate system the eigenproblem and the asymptotic
    /// machinery live in.
    pub fn contrast_basis(&self, row: &[f64]) -> DVector<f64> {
        assert_eq!(row.len(), self.k(), "row length must equal K");
        let dims: Vec<usize> = self
            .knots
            .iter()
            .map(|ks| ks.basis_count().saturating_sub(1))
            .collect();
        let total: usize = dims.iter().sum();
        let mut out = DVector::zeros(total);
        let mut at = 0;
        for k in 0..self.k() {
            let x = self.rescale.apply(k, row[k]);
            let l = self.knots[k].basis_count();
            let mut buf = vec![0.0; l];
            self.knots[k].eval_into(x, &mut buf);
            let centered = DVector::from_vec(buf) - &self.basis_means[k];
            let h = constant_complement(l);
            let reduced = h.tr_mul(&centered);
            out.rows_mut(at, dims[k]).copy_from(&reduced);
            at += dims[k];
        }
        out
    }
}

/// Rescale the input columns and build one full-basis design matrix per
/// measurement.
pub(crate) fn rescaled_designs(
    input: &FusionInput,
    rescale: &RescaleParams,
    knots: &[KnotSet],
) -> Vec<DMatrix<f64>> {
    (0..input.k())
        .map(|k| {
            let col = rescale.apply_column(k, &input.column(k));
            basis_design(&knots[k], &col)
        })
        .collect()
}

/// Center each design at `means` and compress by the constant-complement
/// contrasts: `(B_k - 1 m_k^T) H_k`.
pub(crate) fn contrast_designs(
    designs: &[DMatrix<f64>],
    means: &[DVector<f64>],
) -> Vec<DMatrix<f64>> {
    designs
        .iter()
        .zip(means)
        .map(|(b, m)| {
            let mut centered = b.clone();
            for mut row in centered.row_iter_mut() {
                row -= m.transpose();
            }
            let h = constant_complement(b.ncols());
            centered * h
        })
        .collect()
}

/// Fit with default-style options.
pub fn fit_bscaling(
    input: &FusionInput,
    k0: usize,
    order: usize,
    ridge: f64,
) -> Result<FittedBScaling> {
    fit_bscaling_with(
        input,
        &FitOptions {
            k0,
            order,
            ridge,
            ..FitOptions::default()
        },
    )
}

/// Fit the fusion model: rescale, expand in quantile-knot bases, assemble the
/// moment matrices on the centered contrast parametrization, and solve the
/// whitened eigenproblem.
///
/// The returned coefficients carry a deterministic sign: the fused values are
/// oriented to correlate positively with a name-weighted combination of the
/// rescaled measurements (see `orientation_sign`). A warning is attached when
/// the smallest eigenvalues are within a relative gap of 1e-10; in that case
/// the eigenvector is not identified by the objective alone, and the fit
/// deterministically picks the direction within the tied eigenspace whose
/// fused values correlate most with the first principal component of the
/// rescaled data.
pub fn fit_bscaling_with(input: &FusionInput, opts: &FitOptions) -> Result<FittedBScaling> {
    let kk = input.k();
    let rescale = match &opts.fixed_rescale {
        Some(r) => {
            if r.bounds().len() != kk {
                return Err(Error::DimensionMismatch(
                    "fixed rescale bounds do not match the number of columns".into(),
                ));
            }
            r.clone()
        }
        None => fit_rescaler(input)?,
    };

    let rescaled: Vec<Vec<f64>> = (0..kk)
        .map(|k| rescale.apply_column(k, &input.column(k)))
        .collect();

    let knots: Vec<KnotSet> = match &opts.fixed_knots {
        Some(ks) => {
            if ks.len() != kk {
                return Err(Error::DimensionMismatch(
                    "fixed knot sets do not match the number of columns".into(),
                ));
            }
            ks.clone()
        }
        None => rescaled
            .iter()
            .enumerate()
            .map(|(k, col)| {
                make_quantile_knots(col, opts.k0, opts.order).map_err(|e| match e {
                    Error::DegenerateMeasurement(msg) => Error::DegenerateMeasurement(format!(
                        "column '{}': {msg}",
                        input.column_names()[k]
                    )),
                    other => other,
                })
            })
            .collect::<Result<_>>()?,
    };

    let designs: Vec<DMatrix<f64>> = knots
        .iter()
        .zip(&rescaled)
        .map(|(ks, col)| basis_design(ks, col))
        .collect();
    let offsets = block_offsets(&designs);

    let basis_means: Vec<DVector<f64>> = match &opts.fixed_basis_means {
        Some(ms) => {
            if ms.len() != kk || ms.iter().zip(&designs).any(|(m, d)| m.len() != d.ncols()) {
                return Err(Error::DimensionMismatch(
                    "fixed basis means do not match the basis sizes".into(),
                ));
            }
            ms.clone()
        }
        None => designs
            .iter()
            .map(|d| DVector::from_fn(d.ncols(), |j, _| d.column(j).mean()))
            .collect(),
    };

    let contrasts = contrast_designs(&designs, &basis_means);
    let reduced_offsets = block_offsets(&contrasts);
    let reduced_total = reduced_offsets[kk];
    if reduced_total == 0 {
        return Err(Error::DegenerateMeasurement(
            "every measurement basis reduces to a constant".into(),
        ));
    }
    if input.n() <= reduced_total {
        return Err(Error::InsufficientData(format!(
            "n = {} must exceed the contrast basis dimension {reduced_total}",
            input.n()
        )));
    }

    let moments = assemble_moments(&contrasts)?;
    let mut warnings = Vec::new();

    // Whitening map for the constraint matrix. Directions whose variance
    // falls below the floor cannot be normalized to unit variance and are
    // excluded from the eigenproblem rather than amplified.
    let cov_eig = sym_eig(&moments.mean_cov)?;
    let d_max = cov_eig.values[0];
    let floor = if opts.ridge > 0.0 {
        opts.ridge * moments.mean_cov.trace() / reduced_total as f64
    } else {
        0.0
    };
    let cutoff = (d_max / COND_LIMIT).max(floor);
    let keep = cov_eig.values.iter().take_while(|&&d| d > cutoff).count();
    if keep == 0 {
        return Err(Error::SingularMatrix(
            "constraint matrix has no usable variance".into(),
        ));
    }
    let dropped_directions = reduced_total - keep;
    if dropped_directions > 0 {
        if opts.ridge <= 0.0 {
            return Err(Error::SingularMatrix(format!(
                "constraint matrix is rank-deficient ({dropped_directions} directions below the \
                 1e12 condition cap) and the variance floor is disabled"
            )));
        }
        warnings.push(format!(
            "constraint matrix near-singular: {dropped_directions} of {reduced_total} directions \
             below the variance floor were excluded"
        ));
    }
    let mut w_map = DMatrix::zeros(reduced_total, keep);
    for j in 0..keep {
        let col = cov_eig.vectors.column(j) / cov_eig.values[j].sqrt();
        w_map.set_column(j, &col);
    }

    let whitened = w_map.tr_mul(&moments.within_scatter) * &w_map;
    let whitened = (&whitened + whitened.transpose()) * 0.5;
    let eig = sym_eig(&whitened)?;

    // Tied bottom of the spectrum: the objective cannot identify a direction.
    let scale = eig.values[0].abs().max(f64::MIN_POSITIVE);
    let smallest = eig.values[keep - 1];
    let mut tie_gap = TIE_TOL * scale;
    if smallest.abs() <= ZERO_OBJECTIVE {
        // The minimum itself is numerically zero; every other exactly
        // agreeing direction belongs to the same tie.
        tie_gap = tie_gap.max(ZERO_OBJECTIVE);
    }
    let mut tied_from = keep - 1;
    while tied_from > 0 && eig.values[tied_from - 1] - smallest <= tie_gap {
        tied_from -= 1;
    }

    let mut b_hat = if tied_from < keep - 1 {
        warnings.push(format!(
            "{} smallest eigenvalues tied within {TIE_TOL:.0e} relative; \
             direction chosen by correlation with the first principal component",
            keep - tied_from
        ));
        resolve_tied_direction(
            &eig.vectors,
            tied_from,
            &w_map,
            &rescaled,
            &contrasts,
            &reduced_offsets,
        )
    } else {
        if keep >= 2 && eig.values[keep - 2] - smallest <= tie_gap {
            warnings.push("two smallest eigenvalues nearly tied".into());
        }
        eig.vectors.column(keep - 1).into_owned()
    };
    b_hat /= b_hat.norm();

    let min_eigenvalue = (b_hat.transpose() * &whitened * &b_hat)[(0, 0)];
    let mut contrast_coefs = &w_map * &b_hat;
    // Express the whitened-coordinate solution in the ambient contrast space.
    let mut b_hat = cov_eig.vectors.columns(0, keep) * b_hat;

    // Orientation: the solution is defined up to sign. Orient the fused
    // values to correlate positively with a name-rank-weighted combination of
    // the rescaled measurements. This functional is permutation-equivariant
    // (weights follow sorted column names), invariant to per-column positive
    // affine maps, and continuous in the data, so tiny input perturbations
    // cannot flip the sign; a largest-coefficient rule settles the
    // vanishingly rare degenerate case.
    let fused_raw = {
        let mut scores = DVector::zeros(input.n());
        for k in 0..kk {
            let block = contrast_coefs.rows(reduced_offsets[k], reduced_offsets[k + 1] - reduced_offsets[k]);
            scores += &contrasts[k] * block / kk as f64;
        }
        scores
    };
    let orientation = orientation_sign(&fused_raw, &rescaled, input.column_names());

    // Map back to full-basis coefficients: expand the contrasts and absorb
    // the centering offsets through the partition of unity, so each fitted
    // transform has mean zero over the training sample.
    let mut coefs = DVector::zeros(offsets[kk]);
    for k in 0..kk {
        let l = designs[k].ncols();
        let h = constant_complement(l);
        let alpha = contrast_coefs.rows(reduced_offsets[k], l - 1);
        let block = &h * alpha;
        let offset = -block.dot(&basis_means[k]);
        let full = block.add_scalar(offset);
        coefs.rows_mut(offsets[k], l).copy_from(&full);
    }

    let sign = match orientation {
        Some(s) => {
            if s < 0.0 {
                coefs = -coefs;
            }
            s
        }
        None => canonicalize_sign(&mut coefs),
    };
    b_hat *= sign;
    contrast_coefs *= sign;

    // Aggregate B-variance directly from the training designs.
    let transforms = transforms_from_designs(&designs, &coefs, &offsets);
    let (_, aggregate) = b_variance_of(&transforms);

    Ok(FittedBScaling {
        column_names: input.column_names().to_vec(),
        rescale,
        order: opts.order,
        knots,
        offsets,
        coefs,
        basis_means,
        contrast_coefs,
        whitened_coefs: b_hat,
        eigenvalues: eig.values,
        min_eigenvalue,
        b_variance: aggregate,
        sign,
        n: input.n(),
        ridge: opts.ridge,
        dropped_directions,
        warnings,
    })
}

/// Pick a direction inside a tied bottom eigenspace: maximize the correlation
/// of the fused values with the first principal component score of the
/// rescaled data. Falls back to the plain smallest-eigenvalue column when the
/// target is degenerate.
fn resolve_tied_direction(
    vectors: &DMatrix<f64>,
    tied_from: usize,
    w_map: &DMatrix<f64>,
    rescaled: &[Vec<f64>],
    contrasts: &[DMatrix<f64>],
    reduced_offsets: &[usize],
) -> DVector<f64> {
    let total = vectors.nrows();
    let t = total - tied_from;
    let n = contrasts[0].nrows();
    let kk = contrasts.len();

    // Candidate fused scores: columns are B-means of the tied basis vectors.
    let tied = vectors.columns(tied_from, t).clone_owned();
    let coef_basis = w_map * &tied; // contrast dim x t
    let mut scores = DMatrix::zeros(n, t);
    for k in 0..kk {
        let block = coef_basis.rows(reduced_offsets[k], reduced_offsets[k + 1] - reduced_offsets[k]);
        scores += &contrasts[k] * block / kk as f64;
    }
    for j in 0..t {
        let m = scores.column(j).mean();
        scores.column_mut(j).add_scalar_mut(-m);
    }

    // Target: first principal component score of the rescaled data.
    let mut u = DMatrix::from_fn(n, kk, |i, k| rescaled[k][i]);
    for k in 0..kk {
        let m = u.column(k).mean();
        u.column_mut(k).add_scalar_mut(-m);
    }
    let cov = u.tr_mul(&u) / n as f64;
    let target = match sym_eig(&cov) {
        Ok(eig) => &u * eig.vectors.column(0).into_owned(),
        Err(_) => return vectors.column(total - 1).into_owned(),
    };
    if target.norm() <= 1e-12 {
        return vectors.column(total - 1).into_owned();
    }

    // Maximize corr(scores * w, target): w solves (S^T S) w = S^T target.
    let gram = scores.tr_mul(&scores);
    let rhs = scores.tr_mul(&target);
    let jitter = gram.trace().max(1e-300) / t as f64 * 1e-12;
    let solved = (gram + DMatrix::identity(t, t) * jitter)
        .cholesky()
        .map(|ch| ch.solve(&rhs));
    let w = match solved {
        Some(w) if w.norm() > 0.0 => w,
        _ => return vectors.column(total - 1).into_owned(),
    };
    let dir = &tied * w;
    if dir.norm() <= 1e-300 {
        return vectors.column(total - 1).into_owned();
    }
    dir
}

/// Sign orienting the fused values against a fixed, name-keyed weighted sum
/// of correlations with the rescaled measurements. Returns `None` when the
/// functional is too close to zero to be trustworthy.
fn orientation_sign(fused: &DVector<f64>, rescaled: &[Vec<f64>], names: &[String]) -> Option<f64> {
    // Golden-ratio fractional weights keyed to the rank of each column name:
    // generic (pairwise distinct, no symmetry) and permutation-equivariant.
    const PHI_FRAC: f64 = 0.618_033_988_749_894_9;
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| names[a].cmp(&names[b]));
    let fused_slice: Vec<f64> = fused.iter().cloned().collect();
    let mut score = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        let w = ((rank + 1) as f64 * PHI_FRAC).fract() + 0.5;
        if let Some(c) = crate::stats::pearson(&fused_slice, &rescaled[k]) {
            score += w * c;
        }
    }
    if score.abs() > 1e-9 {
        Some(score.signum())
    } else {
        None
    }
}

fn transforms_from_designs(
    designs: &[DMatrix<f64>],
    coefs: &DVector<f64>,
    offsets: &[usize],
) -> DMatrix<f64> {
    let n = designs[0].nrows();
    let kk = designs.len();
    let mut out = DMatrix::zeros(n, kk);
    for k in 0..kk {
        let block = coefs.rows(offsets[k], offsets[k + 1] - offsets[k]);
        out.set_column(k, &(&designs[k] * block));
    }
    out
}

fn b_variance_of(transforms: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let n = transforms.nrows();
    let kk = transforms.ncols() as f64;
    let mut per_row = DVector::zeros(n);
    for i in 0..n {
        let row = transforms.row(i);
        let mu = row.mean();
        per_row[i] = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / kk;
    }
    let aggregate = per_row.mean();
    (per_row, aggregate)
}

/// Per-measurement fitted transforms evaluated at new rows (`p x K`).
pub fn component_transforms(model: &FittedBScaling, rows: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(rows.ncols(), model.k(), "rows must have K columns");
    let designs: Vec<DMatrix<f64>> = (0..model.k())
        .map(|k| {
            let col: Vec<f64> = rows
                .column(k)
                .iter()
                .map(|&x| model.rescale.apply(k, x))
                .collect();
            basis_design(&model.knots[k], &col)
        })
        .collect();
    transforms_from_designs(&designs, &model.coefs, &model.offsets)
}

/// Fused values at new rows: the mean across measurements of the fitted
/// transforms.
pub fn predict_bmean(model: &FittedBScaling, rows: &DMatrix<f64>) -> DVector<f64> {
    let transforms = component_transforms(model, rows);
    DVector::from_fn(transforms.nrows(), |i, _| transforms.row(i).mean())
}

/// Per-row squared disagreement of the transforms around the fused value,
/// plus its mean.
pub fn b_variance(model: &FittedBScaling, input: &FusionInput) -> (DVector<f64>, f64) {
    let transforms = component_transforms(model, input.data());
    b_variance_of(&transforms)
}

/// One row of the knot-count selection table.
#[derive(Debug, Clone)]
pub struct KnotSelectionRow {
    pub k0: usize,
    pub b_variance: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    pub error: Option<String>,
}

/// Fit over a grid of knot counts and pick the one with the smallest
/// aggregate B-variance; numerically tied values break toward the smallest
/// `k0`. Grid points whose fit fails are recorded and skipped.
pub fn select_k0(
    input: &FusionInput,
    grid: &[usize],
    order: usize,
    ridge: f64,
) -> Result<(usize, Vec<KnotSelectionRow>)> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty k0 grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut table = Vec::with_capacity(sorted.len());
    for &k0 in &sorted {
        match fit_bscaling(input, k0, order, ridge) {
            Ok(model) => table.push(KnotSelectionRow {
                k0,
                b_variance: Some(model.b_variance),
                min_eigenvalue: Some(model.min_eigenvalue),
                error: None,
            }),
            Err(e) => table.push(KnotSelectionRow {
                k0,
                b_variance: None,
                min_eigenvalue: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let min_bv = table
        .iter()
        .filter_map(|r| r.b_variance)
        .fold(f64::INFINITY, f64::min);
    if !min_bv.is_finite() {
        return Err(Error::BenchmarkFailure(
            "every k0 in the grid failed to fit".into(),
        ));
    }
    // Values within numerical noise of the minimum count as ties.
    let tol = 1e-9 * min_bv.abs() + 1e-15;
    let best = table
        .iter()
        .find(|r| r.b_variance.is_some_and(|bv| bv <= min_bv + tol))
        .map(|r| r.k0)
        .unwrap();
    Ok((best, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn uniform_latent(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }

    /// Noiseless affine readouts of a shared latent.
    fn affine_input(y: &[f64], slopes: &[f64], intercepts: &[f64]) -> FusionInput {
        let n = y.len();
        let k = slopes.len();
        let data = DMatrix::from_fn(n, k, |i, j| slopes[j] * y[i] + intercepts[j]);
        FusionInput::unnamed(data).unwrap()
    }

    /// Noisy nonlinear readouts: distinct monotone maps plus jitter.
    fn noisy_input(n: usize, k: usize, seed: u64) -> (Vec<f64>, FusionInput) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mut data = DMatrix::zeros(n, k);
        for j in 0..k {
            let a = 0.5 + j as f64;
            for i in 0..n {
                let noise = 0.05 * (rng.gen::<f64>() - 0.5);
                let v = ((a * (y[i] + noise)).exp() - 1.0) / (a.exp() - 1.0);
                data[(i, j)] = if j % 2 == 0 { v } else { -2.0 * v + 1.0 };
            }
        }
        (y, FusionInput::unnamed(data).unwrap())
    }

    fn corr(a: &DVector<f64>, b: &[f64]) -> f64 {
        crate::stats::pearson(a.as_slice(), b).unwrap()
    }

    #[test]
    fn rescaler_basics() {
        let data = DMatrix::from_column_slice(3, 2, &[2.0, 4.0, 6.0, 0.0, 0.5, 1.0]);
        let input = FusionInput::unnamed(data).unwrap();
        let r = fit_rescaler(&input).unwrap();
        assert_eq!(r.bounds()[0], (2.0, 6.0));
        assert_eq!(r.apply_column(0, &[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        // An already-[0,1] column is unchanged.
        assert_eq!(r.apply_column(1, &[0.0, 0.5, 1.0]), vec![0.0, 0.5, 1.0]);
        // Out-of-range values map outside [0,1] and clamp at evaluation.
        assert_eq!(r.apply(0, 8.0), 1.5);
        let ks = KnotSet::new(2, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(
            crate::spline::eval_basis(&ks, r.apply(0, 8.0)),
            crate::spline::eval_basis(&ks, 1.0)
        );
    }

    #[test]
    fn rescaler_rejects_constant_column() {
        let data = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.5, 1.0]);
        let input = FusionInput::unnamed(data).unwrap();
        assert!(matches!(
            fit_rescaler(&input),
            Err(Error::DegenerateMeasurement(_))
        ));
    }

    #[test]
    fn centering_matrix_properties() {
        let q = centering_matrix(2);
        assert!((q[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((q[(0, 1)] + 0.5).abs() < 1e-15);
        for k in [2, 3, 7] {
            let q = centering_matrix(k);
            assert!((&q * &q - &q).norm() < 1e-12, "idempotent");
            let ones = DVector::from_element(k, 1.0);
            assert!((&q * ones).norm() < 1e-12, "annihilates the ones vector");
        }
    }

    #[test]
    fn constant_complement_is_orthonormal() {
        for l in 2..=7 {
            let h = constant_complement(l);
            let hth = h.tr_mul(&h);
            assert!((hth - DMatrix::identity(l - 1, l - 1)).norm() < 1e-12);
            let ones = DVector::from_element(l, 1.0);
            assert!(h.tr_mul(&ones).norm() < 1e-12);
        }
    }

    #[test]
    fn identical_designs_scatter_annihilates_agreement() {
        // With identical designs the scatter kills every equal-blocks
        // coefficient vector: agreeing transforms have zero disagreement.
        let vals: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
        let ks = make_quantile_knots(&vals, 3, 2).unwrap();
        let d = basis_design(&ks, &vals);
        let moments = assemble_moments(&[d.clone(), d.clone(), d.clone()]).unwrap();
        let l = d.ncols();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let c = DVector::from_fn(l, |_, _| rng.gen::<f64>() - 0.5);
            let mut a = DVector::zeros(3 * l);
            for k in 0..3 {
                a.rows_mut(k * l, l).copy_from(&c);
            }
            assert!((&moments.within_scatter * &a).amax() < 1e-12);
        }
    }

    #[test]
    fn scatter_matches_direct_objective() {
        // A^T L A must equal the disagreement objective computed from scratch.
        let (_, input) = noisy_input(150, 3, 5);
        let rescale = fit_rescaler(&input).unwrap();
        let knots: Vec<KnotSet> = (0..3)
            .map(|k| make_quantile_knots(&rescale.apply_column(k, &input.column(k)), 4, 3).unwrap())
            .collect();
        let designs = rescaled_designs(&input, &rescale, &knots);
        let moments = assemble_moments(&designs).unwrap();
        let total = moments.dim();

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            let a = DVector::from_fn(total, |_, _| rng.gen::<f64>() - 0.5);
            let quad = (a.transpose() * &moments.within_scatter * &a)[(0, 0)];

            let offsets = block_offsets(&designs);
            let h = transforms_from_designs(&designs, &a, &offsets);
            let mut direct = 0.0;
            for i in 0..h.nrows() {
                let mu = h.row(i).mean();
                direct += h.row(i).iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>();
            }
            direct /= h.nrows() as f64;
            assert!(
                (quad - direct).abs() <= 1e-10 * direct.abs().max(1.0),
                "quadratic form {quad} vs direct objective {direct}"
            );
        }
    }

    #[test]
    fn moments_are_symmetric_psd() {
        let (_, input) = noisy_input(200, 4, 11);
        let model = fit_bscaling(&input, 5, 4, 1e-8).unwrap();
        let designs = rescaled_designs(&input, &model.rescale, &model.knots);
        let m = assemble_moments(&designs).unwrap();
        assert!((&m.within_scatter - m.within_scatter.transpose()).amax() < 1e-10);
        assert!((&m.mean_cov - m.mean_cov.transpose()).amax() < 1e-10);
        let eig = sym_eig(&m.within_scatter).unwrap();
        assert!(eig.values[eig.values.len() - 1] > -1e-10);
    }

    #[test]
    fn exact_recovery_identical_columns() {
        let y = uniform_latent(500, 42);
        let input = affine_input(&y, &[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]);
        let model = fit_bscaling(&input, 5, 4, 1e-8).unwrap();
        assert!(model.min_eigenvalue.abs() <= 1e-8, "{}", model.min_eigenvalue);
        let mu = predict_bmean(&model, input.data());
        let c = corr(&mu, &y).abs();
        assert!(c >= 0.999, "correlation {c}");
    }

    #[test]
    fn exact_recovery_affine_columns() {
        let y = uniform_latent(400, 7);
        let input = affine_input(&y, &[1.0, -2.0, 0.5, 3.0], &[0.0, 1.0, -0.3, 2.0]);
        let model = fit_bscaling(&input, 6, 4, 1e-8).unwrap();
        assert!(model.min_eigenvalue.abs() <= 1e-6);
        let mu = predict_bmean(&model, input.data());
        let c = corr(&mu, &y).abs();
        assert!(c >= 0.999, "correlation {c}");
        // All transforms agree in the exact-recovery case.
        let t = component_transforms(&model, input.data());
        for k in 1..4 {
            let diff = (t.column(k) - t.column(0)).amax();
            assert!(diff < 1e-5, "transform {k} deviates by {diff}");
        }
    }

    #[test]
    fn constraint_and_objective_identities() {
        let (_, input) = noisy_input(300, 4, 3);
        let model = fit_bscaling(&input, 5, 4, 1e-8).unwrap();
        assert_eq!(model.dropped_directions, 0);

        // a^T S a = 1 under the n-divisor covariance of the stacked averages,
        // in the full partition-of-unity basis.
        let designs = rescaled_designs(&input, &model.rescale, &model.knots);
        let moments = assemble_moments(&designs).unwrap();
        let c = (model.coefs.transpose() * &moments.mean_cov * &model.coefs)[(0, 0)];
        assert!((c - 1.0).abs() < 1e-8, "constraint value {c}");

        // The reported minimum equals the full-basis quadratic form and K
        // times the aggregate B-variance.
        let quad = (model.coefs.transpose() * &moments.within_scatter * &model.coefs)[(0, 0)];
        assert!(
            (model.min_eigenvalue - quad).abs() < 1e-8 * quad.max(1.0),
            "min eigenvalue {} vs quadratic form {quad}",
            model.min_eigenvalue
        );
        let (_, aggregate) = b_variance(&model, &input);
        assert!(
            (model.min_eigenvalue - 4.0 * aggregate).abs() < 1e-8,
            "{} vs {}",
            model.min_eigenvalue,
            4.0 * aggregate
        );
        assert!((aggregate - model.b_variance).abs() < 1e-12);

        // In-sample fused values have unit variance (n divisor) and mean zero
        // in the canonical gauge.
        let mu = predict_bmean(&model, input.data());
        let var = crate::stats::variance(mu.as_slice());
        assert!((var - 1.0).abs() < 1e-8, "in-sample variance {var}");
        assert!(crate::stats::mean(mu.as_slice()).abs() < 1e-10);

        // Canonical orientation: the fused values correlate positively with
        // the name-weighted combination of the rescaled measurements.
        let mut order: Vec<usize> = (0..input.k()).collect();
        order.sort_by(|&a, &b| input.column_names()[a].cmp(&input.column_names()[b]));
        let fused: Vec<f64> = mu.iter().cloned().collect();
        let mut score = 0.0;
        for (rank, &k) in order.iter().enumerate() {
            let w = ((rank + 1) as f64 * 0.618_033_988_749_894_9).fract() + 0.5;
            let col = model.rescale.apply_column(k, &input.column(k));
            score += w * crate::stats::pearson(&fused, &col).unwrap();
        }
        assert!(score >= 0.0, "orientation score {score}");
        assert!(model.sign == 1.0 || model.sign == -1.0);
    }

    #[test]
    fn transforms_have_zero_training_mean() {
        let (_, input) = noisy_input(200, 3, 77);
        let model = fit_bscaling(&input, 4, 4, 1e-8).unwrap();
        let t = component_transforms(&model, input.data());
        for k in 0..3 {
            assert!(t.column(k).mean().abs() < 1e-10);
        }
    }

    #[test]
    fn predict_is_mean_of_transforms() {
        let (_, input) = noisy_input(150, 3, 21);
        let model = fit_bscaling(&input, 4, 4, 1e-8).unwrap();
        let t = component_transforms(&model, input.data());
        let mu = predict_bmean(&model, input.data());
        for i in 0..t.nrows() {
            assert_eq!(mu[i], t.row(i).mean());
        }
    }

    #[test]
    fn monotone_transforms_for_monotone_generators() {
        // Each column is a monotone map of the latent, so each fitted
        // transform should be essentially monotone over the observed range:
        // evaluate it on a grid and allow only negligible wiggles.
        let (y, input) = noisy_input(400, 3, 17);
        let model = fit_bscaling(&input, 5, 4, 1e-8).unwrap();

        let grid_len = 200;
        for k in 0..input.k() {
            let col = input.column(k);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut rows = DMatrix::zeros(grid_len, input.k());
            for i in 0..grid_len {
                for j in 0..input.k() {
                    // Other columns do not influence transform k.
                    rows[(i, j)] = if j == k {
                        lo + (hi - lo) * i as f64 / (grid_len - 1) as f64
                    } else {
                        input.data()[(0, j)]
                    };
                }
            }
            let t = component_transforms(&model, &rows);
            let vals: Vec<f64> = t.column(k).iter().cloned().collect();
            let range = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - vals.iter().cloned().fold(f64::INFINITY, f64::min);
            // Direction of the column against the latent.
            let dir = crate::stats::pearson(&col, &y).unwrap().signum()
                * corr(&predict_bmean(&model, input.data()), &y).signum();
            let mut violations = 0;
            for w in vals.windows(2) {
                if (w[1] - w[0]) * dir < -1e-3 * range {
                    violations += 1;
                }
            }
            assert!(
                violations <= grid_len / 50,
                "column {k}: {violations} monotonicity violations over the grid"
            );
        }
    }

    #[test]
    fn permutation_equivariance() {
        let (_, input) = noisy_input(250, 4, 9);
        let model = fit_bscaling(&input, 4, 4, 1e-8).unwrap();

        let perm = [2usize, 0, 3, 1];
        let permuted = DMatrix::from_fn(input.n(), 4, |i, j| input.data()[(i, perm[j])]);
        let names = perm
            .iter()
            .map(|&j| input.column_names()[j].clone())
            .collect();
        let input_p = FusionInput::new(permuted, names).unwrap();
        let model_p = fit_bscaling(&input_p, 4, 4, 1e-8).unwrap();

        let mu = predict_bmean(&model, input.data());
        let mu_p = predict_bmean(&model_p, input_p.data());
        assert!((mu - mu_p).amax() < 1e-10);

        // Coefficient blocks travel with their measurement.
        for (new_k, &old_k) in perm.iter().enumerate() {
            let a = model.coef_block(old_k);
            let b = model_p.coef_block(new_k);
            assert!((a - b).amax() < 1e-10);
        }
    }

    #[test]
    fn affine_invariance_of_fitting() {
        let (_, input) = noisy_input(250, 3, 31);
        let model = fit_bscaling(&input, 4, 4, 1e-8).unwrap();

        let scales = [2.5, 0.3, 11.0];
        let shifts = [-1.0, 4.0, 0.2];
        let mapped = DMatrix::from_fn(input.n(), 3, |i, j| {
            scales[j] * input.data()[(i, j)] + shifts[j]
        });
        let input_m = FusionInput::unnamed(mapped.clone()).unwrap();
        let model_m = fit_bscaling(&input_m, 4, 4, 1e-8).unwrap();

        let mu = predict_bmean(&model, input.data());
        let mu_m = predict_bmean(&model_m, &mapped);
        assert!((mu - mu_m).amax() < 1e-8);
    }

    #[test]
    fn latent_scaling_leaves_correlation() {
        let y = uniform_latent(300, 13);
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let input = affine_input(&y2, &[1.0, 2.0, 3.0], &[0.0, -1.0, 0.5]);
        let model = fit_bscaling(&input, 5, 4, 1e-8).unwrap();
        let mu = predict_bmean(&model, input.data());
        assert!(corr(&mu, &y).abs() > 1.0 - 1e-6);
    }

    #[test]
    fn eigenvalues_nonnegative() {
        let (_, input) = noisy_input(300, 3, 55);
        let model = fit_bscaling(&input, 5, 4, 1e-8).unwrap();
        for &d in model.eigenvalues.iter() {
            assert!(d > -1e-10, "negative eigenvalue {d}");
        }
        assert!(model.b_variance >= 0.0);
        let (per_row, _) = b_variance(&model, &input);
        assert!(per_row.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn contrast_basis_matches_designs() {
        let (_, input) = noisy_input(100, 3, 4);
        let model = fit_bscaling(&input, 4, 4, 1e-8).unwrap();
        // The contrast basis of a training row reproduces the fused value via
        // the contrast coefficients (up to the gauge constant).
        let mu = predict_bmean(&model, input.data());
        for i in [0usize, 17, 63] {
            let row: Vec<f64> = (0..3).map(|k| input.data()[(i, k)]).collect();
            let zc = model.contrast_basis(&row);
            let via_contrast = model.contrast_coefs.dot(&zc) / 3.0;
            assert!((via_contrast - mu[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn select_k0_prefers_smaller_on_ties() {
        // Exactly recoverable data: every grid point reaches (numerically)
        // zero B-variance, so the tie-break returns the smallest k0.
        let y = uniform_latent(400, 3);
        let input = affine_input(&y, &[1.0, 2.0, -1.5], &[0.0, 0.1, 0.7]);
        let (best, table) = select_k0(&input, &[6, 4, 8], 4, 1e-8).unwrap();
        assert_eq!(best, 4);
        assert_eq!(table.len(), 3);
        let min_bv = table
            .iter()
            .filter_map(|r| r.b_variance)
            .fold(f64::INFINITY, f64::min);
        let best_bv = table
            .iter()
            .find(|r| r.k0 == best)
            .unwrap()
            .b_variance
            .unwrap();
        assert!(best_bv <= min_bv + 1e-9 * min_bv.abs() + 1e-15);
    }

    #[test]
    fn select_k0_records_failures() {
        let (_, input) = noisy_input(40, 3, 8);
        // k0 = 30 is infeasible at n = 40 (n < k0 + m).
        let (best, table) = select_k0(&input, &[3, 30], 4, 1e-8).unwrap();
        assert_eq!(best, 3);
        assert!(table.iter().any(|r| r.error.is_some()));
    }

    #[test]
    fn insufficient_data_rejected() {
        let y = uniform_latent(20, 4);
        let input = affine_input(&y, &[1.0, 2.0], &[0.0, 0.0]);
        // Contrast dimension 2 * (11 + 2) exceeds n = 20.
        assert!(matches!(
            fit_bscaling(&input, 11, 4, 1e-8),
            Err(Error::InsufficientData(_))
        ));
    }
}
