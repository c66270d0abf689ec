//! Simulation laboratory: deterministic generators for the benchmark designs,
//! the benchmark runner comparing the fused representation against PCA and
//! MDS baselines, and a Monte Carlo calibration study for the prediction
//! intervals.
//!
//! Randomness comes from ChaCha8 with explicit stream separation so every
//! piece is reproducible in isolation:
//! - stream 0: [`gen_latent`];
//! - stream 1: [`gen_measurements`] (world parameters, then noise);
//! - stream 2: the fixed world of a coverage study;
//! - stream 3: the reference sample of a coverage study;
//! - stream `4 + r`: replication `r` of a benchmark or coverage run
//!   (latent draws, then world parameters where applicable, then noise).
//!
//! Replications are independent and may run in parallel; results are keyed by
//! replication index, so reports do not depend on the thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Uniform};
use rayon::prelude::*;

use crate::baselines::{corr_metrics, mds_embed_1d, pc_max_corr, pca_scores};
use crate::error::{Error, Result};
use crate::fit::{
    fit_bscaling_with, predict_bmean, select_k0, FitOptions, FusionInput,
};
use crate::inference::{fit_asymptotics, sigma_mu_ci};
use crate::stats::{excess_kurtosis, mean, quantile_sorted, skewness, variance};

const STREAM_LATENT: u64 = 0;
const STREAM_MEASURE: u64 = 1;
const STREAM_WORLD: u64 = 2;
const STREAM_REFERENCE: u64 = 3;
const STREAM_REPLICATION_BASE: u64 = 4;

/// Distribution of the latent variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Latent {
    Uniform01,
    StdNormal,
}

impl fmt::Display for Latent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Latent::Uniform01 => write!(f, "uniform"),
            Latent::StdNormal => write!(f, "normal"),
        }
    }
}

/// Which nonlinear readout family generates the measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformFamily {
    /// All measurements use the steep logistic readout.
    LogitOnly,
    /// The first half uses the logistic readout, the rest log-ratio readouts.
    Mixed,
}

impl fmt::Display for TransformFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformFamily::LogitOnly => write!(f, "logit"),
            TransformFamily::Mixed => write!(f, "mixed"),
        }
    }
}

/// One simulation design cell.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub k: usize,
    pub latent: Latent,
    /// Standard deviation of the additive latent noise.
    pub noise_scale: f64,
    /// Decay exponent of the alternating series weights.
    pub nu: f64,
    /// Number of series terms.
    pub h: usize,
    pub family: TransformFamily,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n: usize, k: usize, latent: Latent, family: TransformFamily, seed: u64) -> Self {
        Self {
            n,
            k,
            latent,
            noise_scale: 0.1,
            nu: 2.0,
            h: 5,
            family,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 1 || self.k < 2 || self.h < 1 {
            return Err(Error::InvalidParameter(format!(
                "need n >= 1, K >= 2, H >= 1; got n={}, K={}, H={}",
                self.n, self.k, self.h
            )));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::InvalidParameter(
                "noise scale must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// The steep logistic readout `1 / (1 + exp(20 (x - 1/2)))`.
pub fn logistic_readout(x: f64) -> f64 {
    1.0 / (1.0 + (20.0 * (x - 0.5)).exp())
}

/// The log-ratio readout `log |t / x|`, with `x` clamped away from zero.
pub fn log_ratio_readout(t: usize, x: f64) -> f64 {
    let clamped = if x.abs() < 1e-12 {
        if x.is_sign_negative() {
            -1e-12
        } else {
            1e-12
        }
    } else {
        x
    };
    (t as f64 / clamped).abs().ln()
}

/// Frozen random coefficients of a measurement model: scale `s_k`, series
/// weights `Z_kt`, and the deterministic alternating decay `delta_t`.
#[derive(Debug, Clone)]
pub struct WorldParams {
    pub scale: Vec<f64>,
    pub weights: DMatrix<f64>,
    pub deltas: Vec<f64>,
}

impl WorldParams {
    /// Draw `s_k ~ U(-10, 10)` and `Z_kt ~ U(-sqrt(3), sqrt(3))`;
    /// `delta_t = (-1)^{t+1} t^{-nu/2}`.
    pub fn draw(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Self {
        let s_dist = Uniform::new(-10.0, 10.0);
        let z_dist = Uniform::new(-(3.0_f64.sqrt()), 3.0_f64.sqrt());
        let scale: Vec<f64> = (0..cfg.k).map(|_| rng.sample(s_dist)).collect();
        let weights = DMatrix::from_fn(cfg.k, cfg.h, |_, _| rng.sample(z_dist));
        let deltas: Vec<f64> = (1..=cfg.h)
            .map(|t| {
                let sign = if t % 2 == 1 { 1.0 } else { -1.0 };
                sign * (t as f64).powf(-cfg.nu / 2.0)
            })
            .collect();
        Self {
            scale,
            weights,
            deltas,
        }
    }

    /// Noisy measurements of `y`: one noise draw per (observation,
    /// measurement), shared across the series terms.
    pub fn measure(&self, y: &[f64], cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let noise = Normal::new(0.0, cfg.noise_scale)
            .map_err(|e| Error::InvalidParameter(format!("noise distribution: {e}")))?;
        let mut data = DMatrix::zeros(y.len(), cfg.k);
        for i in 0..y.len() {
            for k in 0..cfg.k {
                let eps: f64 = rng.sample(noise);
                data[(i, k)] = self.readout(k, y[i] + eps, cfg);
            }
        }
        Ok(data)
    }

    /// The measurement row a noiseless observation of `y_value` would give.
    pub fn noiseless_row(&self, y_value: f64, cfg: &SimConfig) -> Vec<f64> {
        (0..cfg.k).map(|k| self.readout(k, y_value, cfg)).collect()
    }

    fn readout(&self, k: usize, x: f64, cfg: &SimConfig) -> f64 {
        let logistic_cols = cfg.k.div_ceil(2);
        let use_logistic = matches!(cfg.family, TransformFamily::LogitOnly) || k < logistic_cols;
        let mut acc = 0.0;
        for t in 1..=cfg.h {
            let g = if use_logistic {
                logistic_readout(x)
            } else {
                log_ratio_readout(t, x)
            };
            acc += self.scale[k] * self.weights[(k, t - 1)] * self.deltas[t - 1] * g;
        }
        acc
    }
}

/// Latent draws on the dedicated stream (deterministic per seed).
pub fn gen_latent(cfg: &SimConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    let mut rng = cfg.rng(STREAM_LATENT);
    Ok(draw_latent(cfg, &mut rng))
}

fn draw_latent(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> DVector<f64> {
    match cfg.latent {
        Latent::Uniform01 => DVector::from_fn(cfg.n, |_, _| rng.gen::<f64>()),
        Latent::StdNormal => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            DVector::from_fn(cfg.n, |_, _| rng.sample(normal))
        }
    }
}

/// Measurements of a given latent vector on the dedicated stream: a fresh
/// world is drawn, then the noise.
pub fn gen_measurements(y: &DVector<f64>, cfg: &SimConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let mut rng = cfg.rng(STREAM_MEASURE);
    let world = WorldParams::draw(cfg, &mut rng);
    let y_slice: Vec<f64> = y.iter().cloned().collect();
    world.measure(&y_slice, cfg, &mut rng)
}

/// Latent and measurements for one benchmark replication (its own stream,
/// fresh world).
pub fn replication_dataset(cfg: &SimConfig, rep: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    cfg.validate()?;
    let mut rng = cfg.rng(STREAM_REPLICATION_BASE + rep as u64);
    let y = draw_latent(cfg, &mut rng);
    let world = WorldParams::draw(cfg, &mut rng);
    let y_slice: Vec<f64> = y.iter().cloned().collect();
    let data = world.measure(&y_slice, cfg, &mut rng)?;
    Ok((y, data))
}

/// Per-method correlation summary over the replications of one cell.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: String,
    /// (replication index, absolute correlation), ordered by replication.
    pub values: Vec<(usize, f64)>,
    pub mean: f64,
    pub sd: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl MethodSummary {
    fn from_values(method: &str, values: Vec<(usize, f64)>) -> Self {
        let xs: Vec<f64> = values.iter().map(|&(_, v)| v).collect();
        let mut sorted = xs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self {
            method: method.to_string(),
            mean: mean(&xs),
            sd: variance(&xs).sqrt(),
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            values,
        }
    }
}

/// Benchmark results for one simulation cell.
#[derive(Debug, Clone)]
pub struct BenchCell {
    pub cfg: SimConfig,
    pub methods: Vec<MethodSummary>,
    pub failures: usize,
    pub mean_fit_seconds: f64,
}

/// Results over all requested cells.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
    pub reps: usize,
}

impl BenchReport {
    /// One row per (cell, method, replication).
    pub fn to_tidy_csv(&self) -> String {
        let mut out = String::from("n,K,latent,family,noise_scale,method,rep,abs_corr\n");
        for cell in &self.cells {
            for m in &cell.methods {
                for &(rep, v) in &m.values {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        cell.cfg.n,
                        cell.cfg.k,
                        cell.cfg.latent,
                        cell.cfg.family,
                        cell.cfg.noise_scale,
                        m.method,
                        rep,
                        v
                    ));
                }
            }
        }
        out
    }

    /// One row per (cell, method) with summary statistics.
    pub fn to_summary_csv(&self) -> String {
        let mut out = String::from(
            "n,K,latent,family,noise_scale,method,mean,sd,q1,median,q3,reps,failures,mean_fit_seconds,seed\n",
        );
        for cell in &self.cells {
            for m in &cell.methods {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    cell.cfg.n,
                    cell.cfg.k,
                    cell.cfg.latent,
                    cell.cfg.family,
                    cell.cfg.noise_scale,
                    m.method,
                    m.mean,
                    m.sd,
                    m.q1,
                    m.median,
                    m.q3,
                    m.values.len(),
                    cell.failures,
                    cell.mean_fit_seconds,
                    cell.cfg.seed
                ))
            }
        }
        out
    }

    /// Mean absolute correlation of one method in one cell.
    pub fn method_mean(&self, cell: usize, method: &str) -> Option<f64> {
        self.cells[cell]
            .methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.mean)
    }
}

struct RepOutcome {
    rep: usize,
    corrs: BTreeMap<String, f64>,
    fit_seconds: f64,
}

/// Run the benchmark: for every design cell and replication, generate data,
/// fit the fusion (choosing the knot count on `k0_grid` by B-variance), and
/// record the absolute correlation with the latent for the fused values and
/// for the PCA/MDS baselines alongside `rho_max` and `rho_bar0`.
///
/// Failed replications are excluded; a cell fails outright when 5% or more of
/// its replications fail.
pub fn run_benchmark(
    settings: &[SimConfig],
    reps: usize,
    k0_grid: &[usize],
    order: usize,
) -> Result<BenchReport> {
    if reps < 1 {
        return Err(Error::InvalidParameter("reps must be >= 1".into()));
    }
    if k0_grid.is_empty() {
        return Err(Error::InvalidParameter("empty k0 grid".into()));
    }
    let mut cells = Vec::with_capacity(settings.len());
    for cfg in settings {
        cfg.validate()?;
        let outcomes: Vec<Result<RepOutcome>> = (0..reps)
            .into_par_iter()
            .map(|rep| run_replication(cfg, rep, k0_grid, order))
            .collect();

        let mut ok: Vec<RepOutcome> = Vec::with_capacity(reps);
        let mut failures = 0;
        for o in outcomes {
            match o {
                Ok(r) => ok.push(r),
                Err(_) => failures += 1,
            }
        }
        if failures * 20 >= reps {
            return Err(Error::BenchmarkFailure(format!(
                "{failures} of {reps} replications failed for n={}, K={}",
                cfg.n, cfg.k
            )));
        }

        let method_names = ["b_mean", "pc_max", "mds", "rho_max", "rho_bar0"];
        let methods = method_names
            .iter()
            .map(|&name| {
                let values: Vec<(usize, f64)> =
                    ok.iter().map(|r| (r.rep, r.corrs[name])).collect();
                MethodSummary::from_values(name, values)
            })
            .collect();
        let mean_fit_seconds = mean(&ok.iter().map(|r| r.fit_seconds).collect::<Vec<_>>());
        cells.push(BenchCell {
            cfg: cfg.clone(),
            methods,
            failures,
            mean_fit_seconds,
        });
    }
    Ok(BenchReport { cells, reps })
}

fn run_replication(
    cfg: &SimConfig,
    rep: usize,
    k0_grid: &[usize],
    order: usize,
) -> Result<RepOutcome> {
    let (y, data) = replication_dataset(cfg, rep)?;
    let y_slice: Vec<f64> = y.iter().cloned().collect();
    let input = FusionInput::unnamed(data.clone())?;

    let start = Instant::now();
    let k0 = if k0_grid.len() == 1 {
        k0_grid[0]
    } else {
        select_k0(&input, k0_grid, order, 1e-8)?.0
    };
    let model = fit_bscaling_with(
        &input,
        &FitOptions {
            k0,
            order,
            ..FitOptions::default()
        },
    )?;
    let fit_seconds = start.elapsed().as_secs_f64();

    let fused = predict_bmean(&model, input.data());
    let (scores, _, _) = pca_scores(input.data())?;
    let mds = mds_embed_1d(input.data())?;

    let mut candidates = BTreeMap::new();
    candidates.insert("b_mean".to_string(), fused);
    candidates.insert("mds".to_string(), mds);
    let report = corr_metrics(input.data(), &candidates, &y_slice)?;

    let mut corrs = BTreeMap::new();
    corrs.insert("b_mean".to_string(), report.per_method["b_mean"]);
    corrs.insert("mds".to_string(), report.per_method["mds"]);
    corrs.insert("pc_max".to_string(), pc_max_corr(&scores, &y_slice));
    corrs.insert("rho_max".to_string(), report.rho_max);
    corrs.insert("rho_bar0".to_string(), report.rho_bar0);
    Ok(RepOutcome {
        rep,
        corrs,
        fit_seconds,
    })
}

/// Result of a coverage study for the prediction interval.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    /// Fraction of replications whose interval covered the reference value.
    pub coverage: f64,
    /// Reference fused value at the queried observation (large-sample fit).
    pub mu_ref: f64,
    pub mean_width: f64,
    pub mean_sigma_mu: f64,
    /// Moments of the standardized errors sqrt(n)(mu_hat - mu_ref)/sigma_mu.
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub reps_used: usize,
    pub failures: usize,
}

/// Monte Carlo check of the prediction interval.
///
/// A single world (scale and series weights) is frozen on its own stream, a
/// large reference sample defines the target fused value at `w_new` together
/// with the spline spaces (knots, rescaling, basis centering), and each
/// replication refits on `cfg.n` fresh observations within those fixed spaces
/// and records whether its interval covers the reference value.
pub fn mc_coverage(
    cfg: &SimConfig,
    k0: usize,
    order: usize,
    w_new: &[f64],
    reps: usize,
    level: f64,
    reference_n: usize,
    max_dim: Option<usize>,
) -> Result<CoverageReport> {
    cfg.validate()?;
    if w_new.len() != cfg.k {
        return Err(Error::DimensionMismatch(format!(
            "w_new has {} entries for K = {}",
            w_new.len(),
            cfg.k
        )));
    }
    let mut world_rng = cfg.rng(STREAM_WORLD);
    let world = WorldParams::draw(cfg, &mut world_rng);

    // Reference fit: defines the target value and the fixed spline spaces.
    let mut ref_rng = cfg.rng(STREAM_REFERENCE);
    let ref_cfg = SimConfig {
        n: reference_n,
        ..cfg.clone()
    };
    let y_ref = draw_latent(&ref_cfg, &mut ref_rng);
    let y_ref_slice: Vec<f64> = y_ref.iter().cloned().collect();
    let data_ref = world.measure(&y_ref_slice, &ref_cfg, &mut ref_rng)?;
    let ref_model = fit_bscaling_with(
        &FusionInput::unnamed(data_ref)?,
        &FitOptions {
            k0,
            order,
            ..FitOptions::default()
        },
    )?;
    let mu_ref = predict_bmean(
        &ref_model,
        &DMatrix::from_fn(1, cfg.k, |_, j| w_new[j]),
    )[0];

    let fixed = FitOptions {
        k0,
        order,
        fixed_knots: Some(ref_model.knots.clone()),
        fixed_rescale: Some(ref_model.rescale.clone()),
        fixed_basis_means: Some(ref_model.basis_means.clone()),
        ..FitOptions::default()
    };

    let outcomes: Vec<Result<(bool, f64, f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<(bool, f64, f64, f64)> {
            let mut rng = cfg.rng(STREAM_REPLICATION_BASE + rep as u64);
            let y = draw_latent(cfg, &mut rng);
            let y_slice: Vec<f64> = y.iter().cloned().collect();
            let data = world.measure(&y_slice, cfg, &mut rng)?;
            let input = FusionInput::unnamed(data)?;
            let model = fit_bscaling_with(&input, &fixed)?;
            let asy = fit_asymptotics(&model, &input, max_dim)?;
            let ci = sigma_mu_ci(&model, &asy, w_new, level)?;
            // The fused representation is identified only up to sign; align
            // each replication with the reference direction (both live in
            // the same frozen contrast space).
            let mu_hat = if model.contrast_coefs.dot(&ref_model.contrast_coefs) < 0.0 {
                -ci.mu_hat
            } else {
                ci.mu_hat
            };
            let half = 0.5 * (ci.upper - ci.lower);
            let covered = (mu_hat - mu_ref).abs() <= half;
            let standardized = if ci.sigma_mu > 0.0 {
                (cfg.n as f64).sqrt() * (mu_hat - mu_ref) / ci.sigma_mu
            } else {
                f64::INFINITY
            };
            Ok((covered, ci.upper - ci.lower, ci.sigma_mu, standardized))
        })
        .collect();

    let mut covered = 0usize;
    let mut widths = Vec::new();
    let mut sigmas = Vec::new();
    let mut standardized = Vec::new();
    let mut failures = 0usize;
    for o in outcomes {
        match o {
            Ok((c, w, s, z)) if z.is_finite() => {
                if c {
                    covered += 1;
                }
                widths.push(w);
                sigmas.push(s);
                standardized.push(z);
            }
            _ => failures += 1,
        }
    }
    if failures * 20 >= reps {
        return Err(Error::BenchmarkFailure(format!(
            "{failures} of {reps} coverage replications failed"
        )));
    }
    let used = widths.len();
    Ok(CoverageReport {
        coverage: covered as f64 / used as f64,
        mu_ref,
        mean_width: mean(&widths),
        mean_sigma_mu: mean(&sigmas),
        skewness: skewness(&standardized),
        excess_kurtosis: excess_kurtosis(&standardized),
        reps_used: used,
        failures,
    })
}
