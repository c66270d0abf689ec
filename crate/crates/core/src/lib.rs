//! B-scaling: fuse K heterogeneous measurements of one latent quantity into a
//! single one-dimensional representation.
//!
//! Each measurement column is rescaled to `[0, 1]`, expanded in a quantile-knot
//! B-spline basis, and the spline coefficients that make the K transformed
//! measurements agree as closely as possible (in mean squared deviation around
//! their per-observation average) are found by solving a generalized eigenvalue
//! problem. The average of the fitted transforms is the fused value (the
//! *B-mean*); the residual disagreement is the *B-variance*.
//!
//! Modules:
//! - [`spline`]: quantile-knot clamped B-spline bases on `[0, 1]`.
//! - [`linalg`]: dense symmetric eigendecomposition, inverse square roots,
//!   Kronecker/vec utilities.
//! - [`fit`]: moment assembly, the eigenproblem solve, prediction, B-variance,
//!   and knot-count selection.
//! - [`inference`]: plug-in influence-function asymptotics and prediction
//!   confidence intervals.
//! - [`baselines`]: PCA and classical MDS reference fusers plus correlation
//!   metrics.
//! - [`simlab`]: deterministic simulation generators, the benchmark runner,
//!   and Monte Carlo calibration studies.
//! - [`diagnostics`]: the adjusted-R² regression diagnostic.
//! - [`model_io`]: versioned JSON persistence for fitted models.

pub mod baselines;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod inference;
pub mod linalg;
pub mod model_io;
pub mod simlab;
pub mod spline;
pub mod stats;

pub use error::{Error, Result};
pub use fit::{
    assemble_moments, b_variance, component_transforms, fit_bscaling, fit_bscaling_with,
    fit_rescaler, predict_bmean, select_k0, FitOptions, FittedBScaling, FusionInput, MomentPair,
    RescaleParams,
};
pub use spline::{basis_design, eval_basis, make_quantile_knots, KnotSet};
