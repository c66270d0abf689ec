//! Regression diagnostics for fused values: ordinary least squares of a
//! (log-transformed) response on a single fused predictor, reported as an
//! adjusted R-squared.

use crate::error::{Error, Result};
use crate::stats::{mean, pearson};

/// Simple-regression fit summary.
#[derive(Debug, Clone, Copy)]
pub struct RegressionFit {
    pub alpha0: f64,
    pub alpha1: f64,
    pub r2: f64,
    pub adj_r2: f64,
}

/// Ordinary least squares of `g` (optionally `log(g)`) on `x` with an
/// intercept; `adj_r2 = 1 - (1 - r2)(n - 1)/(n - 2)`.
pub fn adjusted_r2(x: &[f64], g: &[f64], log_response: bool) -> Result<RegressionFit> {
    let n = x.len();
    if g.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "predictor has {n} rows, response has {}",
            g.len()
        )));
    }
    if n < 3 {
        return Err(Error::InsufficientData(
            "regression needs at least 3 observations".into(),
        ));
    }
    let response: Vec<f64> = if log_response {
        if let Some(bad) = g.iter().position(|&v| v <= 0.0) {
            return Err(Error::DomainError(format!(
                "log response requested but response row {bad} is {} <= 0",
                g[bad]
            )));
        }
        g.iter().map(|v| v.ln()).collect()
    } else {
        g.to_vec()
    };

    let mx = mean(x);
    let my = mean(&response);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(&response) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= 0.0 {
        return Err(Error::ZeroVariance("predictor is constant".into()));
    }
    let alpha1 = sxy / sxx;
    let alpha0 = my - alpha1 * mx;
    let r2 = pearson(x, &response).map(|c| c * c).unwrap_or(0.0);
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - 2.0);
    Ok(RegressionFit {
        alpha0,
        alpha1,
        r2,
        adj_r2,
    })
}
