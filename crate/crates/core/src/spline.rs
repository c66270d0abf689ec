//! Quantile-knot clamped B-spline bases on the unit interval.
//!
//! A [`KnotSet`] holds an order `m >= 1` and an ascending knot sequence
//! `0 = t_0 < t_1 < ... < t_k0 = 1`. The basis is the clamped B-spline basis
//! (boundary knots repeated `m` times), which has exactly
//! `l = k0 + m - 1` functions: for `m = 1` these are the indicators of the
//! knot subintervals, and for larger `m` the usual piecewise polynomials of
//! degree `m - 1` with `m - 2` continuous derivatives.
//!
//! The basis is a partition of unity on `[0, 1]`: every function is
//! nonnegative and at any point at most `m` of them are nonzero, summing to 1.
//! Evaluation points outside `[0, 1]` are clamped to the interval.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Knots equal up to this absolute tolerance are collapsed when constructing
/// quantile knot sets (the domain is always `[0, 1]`).
const KNOT_DEDUP_TOL: f64 = 1e-10;

/// Spline space specification for one measurement: order plus knot sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSet {
    order: usize,
    knots: Vec<f64>,
    /// Clamped (padded) knot vector: `order` copies of 0, the interior knots,
    /// `order` copies of 1.
    padded: Vec<f64>,
}

impl KnotSet {
    /// Build a knot set, validating the invariants: `order >= 1`, at least two
    /// knots, strictly increasing, starting at 0 and ending at 1.
    pub fn new(order: usize, knots: Vec<f64>) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidParameter("spline order must be >= 1".into()));
        }
        if knots.len() < 2 {
            return Err(Error::InvalidParameter(
                "a knot set needs at least two knots".into(),
            ));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameter(format!(
                "knots must start at 0 and end at 1, got [{}, {}]",
                knots[0],
                knots.last().unwrap()
            )));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "knots must be strictly increasing".into(),
            ));
        }
        let mut padded = Vec::with_capacity(knots.len() + 2 * (order - 1));
        padded.extend(std::iter::repeat(0.0).take(order - 1));
        padded.extend_from_slice(&knots);
        padded.extend(std::iter::repeat(1.0).take(order - 1));
        Ok(Self {
            order,
            knots,
            padded,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions: knot intervals plus `order - 1`.
    pub fn basis_count(&self) -> usize {
        self.knots.len() - 1 + self.order - 1
    }

    /// Index of the knot span containing `x` in the padded vector, clamped to
    /// the valid range so boundary evaluations land in the first/last span.
    fn find_span(&self, x: f64) -> usize {
        let p = self.order - 1;
        let nb = self.basis_count();
        // padded[nb] is the right boundary.
        if x >= self.padded[nb] {
            return nb - 1;
        }
        if x <= self.padded[p] {
            return p;
        }
        let mut lo = p;
        let mut hi = nb;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.padded[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Evaluate the (at most `order`) nonzero basis functions at `x` into
    /// `row`, which must be zeroed and of length `basis_count()`.
    /// `x` is clamped to `[0, 1]`.
    pub(crate) fn eval_into(&self, x: f64, row: &mut [f64]) {
        debug_assert_eq!(row.len(), self.basis_count());
        let x = x.clamp(0.0, 1.0);
        let p = self.order - 1;
        let span = self.find_span(x);
        let tau = &self.padded;

        // Triangular Cox-de Boor scheme over the nonzero window.
        let mut vals = vec![0.0; self.order];
        let mut left = vec![0.0; self.order];
        let mut right = vec![0.0; self.order];
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = x - tau[span + 1 - j];
            right[j] = tau[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        for (offset, &v) in vals.iter().enumerate() {
            row[span - p + offset] = v;
        }
    }
}

/// Build a knot set whose interior knots sit at the `j/k0` empirical quantiles
/// of `values` (`j = 1, ..., k0 - 1`), with boundary knots forced to 0 and 1.
///
/// Quantiles that coincide with each other or with a boundary (within 1e-10)
/// are collapsed, shrinking the effective number of intervals; heavily tied
/// data therefore yields a smaller basis instead of an error. Values are
/// clamped to `[0, 1]` before taking quantiles.
pub fn make_quantile_knots(values: &[f64], k0: usize, order: usize) -> Result<KnotSet> {
    if k0 < 2 {
        return Err(Error::InvalidParameter("k0 must be >= 2".into()));
    }
    if order < 1 {
        return Err(Error::InvalidParameter("spline order must be >= 1".into()));
    }
    let n = values.len();
    if n < k0 + order {
        return Err(Error::InsufficientData(format!(
            "need at least k0 + m = {} points for quantile knots, got {n}",
            k0 + order
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantile knot values contain NaN/Inf".into()));
    }

    let mut sorted: Vec<f64> = values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let distinct = 1 + sorted.windows(2).filter(|w| w[1] > w[0]).count();
    if distinct < 2 {
        return Err(Error::DegenerateMeasurement(
            "fewer than two distinct values".into(),
        ));
    }

    let mut knots = vec![0.0];
    for j in 1..k0 {
        let q = crate::stats::quantile_sorted(&sorted, j as f64 / k0 as f64);
        if q - knots.last().unwrap() > KNOT_DEDUP_TOL && 1.0 - q > KNOT_DEDUP_TOL {
            knots.push(q);
        }
    }
    knots.push(1.0);
    KnotSet::new(order, knots)
}

/// Evaluate the full basis vector at a point (clamped to `[0, 1]`).
/// The result has length `ks.basis_count()`, is entrywise nonnegative, and
/// sums to 1.
pub fn eval_basis(ks: &KnotSet, x: f64) -> DVector<f64> {
    let mut row = vec![0.0; ks.basis_count()];
    ks.eval_into(x, &mut row);
    DVector::from_vec(row)
}

/// Design matrix: row `i` is the basis evaluated at `values[i]`.
pub fn basis_design(ks: &KnotSet, values: &[f64]) -> DMatrix<f64> {
    let l = ks.basis_count();
    let mut design = DMatrix::zeros(values.len(), l);
    let mut row = vec![0.0; l];
    for (i, &x) in values.iter().enumerate() {
        row.iter_mut().for_each(|v| *v = 0.0);
        ks.eval_into(x, &mut row);
        for (j, &v) in row.iter().enumerate() {
            design[(i, j)] = v;
        }
    }
    design
}
