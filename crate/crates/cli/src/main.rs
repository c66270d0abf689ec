//! `bscaling`: fit the spline-based fusion model on CSV data, predict fused
//! values, run the simulation benchmarks, and compute asymptotic prediction
//! intervals.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
//! non-numeric input, missing columns), 3 numerical failure (singular
//! matrices, dimension guard). Every failure also prints a single
//! machine-parseable line to stderr:
//! `bscaling-error code=<n> kind=<kind> detail="..."`.

mod csv_io;

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use bscaling::diagnostics::adjusted_r2;
use bscaling::error::Error as CoreError;
use bscaling::fit::{
    b_variance, component_transforms, fit_bscaling_with, predict_bmean, select_k0, FitOptions,
    FusionInput,
};
use bscaling::inference::{fit_asymptotics, sigma_mu_ci};
use bscaling::model_io::{load_model, save_model, ModelMetadata};
use bscaling::simlab::{
    gen_latent, gen_measurements, run_benchmark, Latent, SimConfig, TransformFamily,
};

use csv_io::{emit, format_csv, read_numeric_csv};

/// Error with a process exit code and a machine-parseable kind.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub detail: String,
}

impl CliError {
    pub fn usage(detail: impl Into<String>) -> Self {
        Self {
            code: 1,
            kind: "usage",
            detail: detail.into(),
        }
    }
    pub fn data(detail: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "data",
            detail: detail.into(),
        }
    }
    pub fn numeric(detail: impl Into<String>) -> Self {
        Self {
            code: 3,
            kind: "numeric",
            detail: detail.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::InvalidParameter(_) => CliError::usage(e.to_string()),
            CoreError::SingularMatrix(_)
            | CoreError::MemoryBudget(_)
            | CoreError::NegativeVariance(_)
            | CoreError::BenchmarkFailure(_) => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "bscaling",
    version,
    about = "Fuse multi-source measurements of a latent quantity via spline transforms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a fusion model on a CSV of measurements (one column per source).
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// Number of knot intervals.
        #[arg(long, default_value_t = 11)]
        knots: usize,
        /// Spline order m.
        #[arg(long, default_value_t = 4)]
        order: usize,
        /// Choose the knot count from this grid (e.g. "11..25" or "11,15,19")
        /// by smallest B-variance instead of --knots.
        #[arg(long, value_name = "GRID")]
        select_knots: Option<String>,
        /// Relative variance floor for the constraint matrix.
        #[arg(long, default_value_t = 1e-8)]
        ridge: f64,
        #[arg(long)]
        out: PathBuf,
        /// Suppress the timestamp so outputs are byte-reproducible.
        #[arg(long)]
        no_meta: bool,
    },
    /// Append the fused b_mean column to a CSV using a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the per-measurement fitted transform values.
    Transforms {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit per-row disagreement (B-variance) and print the aggregate.
    Bvar {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit over a knot-count grid and tabulate B-variance per candidate.
    SelectKnots {
        #[arg(long)]
        input: PathBuf,
        /// Grid such as "11..25" (inclusive) or "11,13,15".
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, default_value_t = 1e-8)]
        ridge: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Asymptotic confidence intervals for fused predictions at new rows.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// Training data the model was fitted on.
        #[arg(long)]
        input: PathBuf,
        /// CSV of rows to predict at (same measurement columns).
        #[arg(long)]
        at: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Raise the contrast-dimension guard of the influence machinery.
        #[arg(long)]
        max_dim: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate one synthetic dataset (measurements plus latent file).
    Simulate {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// "uniform" or "normal".
        #[arg(long, default_value = "uniform")]
        latent: String,
        /// "logit" or "mixed".
        #[arg(long, default_value = "logit")]
        family: String,
        #[arg(long, default_value_t = 0.1)]
        noise_scale: f64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Measurements CSV.
        #[arg(long)]
        out: PathBuf,
        /// Latent-variable CSV.
        #[arg(long)]
        latent_out: PathBuf,
    },
    /// Monte Carlo benchmark against PCA and MDS baselines; writes tidy and
    /// summary CSVs.
    Bench {
        /// Comma-separated sample sizes, e.g. "500,1000".
        #[arg(long, default_value = "1000")]
        n: String,
        /// Comma-separated measurement counts, e.g. "7,10".
        #[arg(long, default_value = "10")]
        k: String,
        /// Comma-separated latent laws from {uniform, normal}.
        #[arg(long, default_value = "uniform")]
        latent: String,
        /// Comma-separated families from {logit, mixed}.
        #[arg(long, default_value = "logit")]
        family: String,
        #[arg(long, default_value_t = 0.1)]
        noise_scale: f64,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Knot-count grid searched per replication.
        #[arg(long, default_value = "11")]
        k0_grid: String,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Adjusted R-squared of regressing a (log-)response on a fused column.
    R2 {
        /// CSV holding the fused predictor.
        #[arg(long)]
        fused: PathBuf,
        /// Predictor column name (default: "b_mean").
        #[arg(long, default_value = "b_mean")]
        fused_col: String,
        /// CSV holding the response.
        #[arg(long)]
        response: PathBuf,
        /// Response column name (default: first column).
        #[arg(long)]
        response_col: Option<String>,
        /// Regress log(response) instead of the raw response.
        #[arg(long)]
        log_response: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_grid(text: &str) -> Result<Vec<usize>, CliError> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("bad grid bound '{lo}'")))?;
        let hi: usize = hi
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("bad grid bound '{hi}'")))?;
        if hi < lo {
            return Err(CliError::usage(format!("empty grid {lo}..{hi}")));
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::usage(format!("bad grid entry '{p}'")))
        })
        .collect()
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::usage(format!("bad list entry '{p}'")))
        })
        .collect()
}

fn parse_latent(text: &str) -> Result<Latent, CliError> {
    match text.trim() {
        "uniform" => Ok(Latent::Uniform01),
        "normal" => Ok(Latent::StdNormal),
        other => Err(CliError::usage(format!(
            "unknown latent '{other}' (expected uniform or normal)"
        ))),
    }
}

fn parse_family(text: &str) -> Result<TransformFamily, CliError> {
    match text.trim() {
        "logit" => Ok(TransformFamily::LogitOnly),
        "mixed" => Ok(TransformFamily::Mixed),
        other => Err(CliError::usage(format!(
            "unknown family '{other}' (expected logit or mixed)"
        ))),
    }
}

fn load_input(path: &PathBuf) -> Result<(FusionInput, csv_io::NumericTable), CliError> {
    let table = read_numeric_csv(path)?;
    let input = FusionInput::new(table.data.clone(), table.headers.clone())?;
    Ok((input, table))
}

/// Rows of `table` restricted to the model's columns, in model order.
fn model_rows(
    model_columns: &[String],
    table: &csv_io::NumericTable,
) -> Result<DMatrix<f64>, CliError> {
    table.select(model_columns)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit {
            input,
            knots,
            order,
            select_knots,
            ridge,
            out,
            no_meta,
        } => {
            let (fusion, _) = load_input(&input)?;
            let (k0, grid_used) = match select_knots {
                Some(grid_text) => {
                    let grid = parse_grid(&grid_text)?;
                    let (best, _) = select_k0(&fusion, &grid, order, ridge)?;
                    (best, Some(grid))
                }
                None => (knots, None),
            };
            let model = fit_bscaling_with(
                &fusion,
                &FitOptions {
                    k0,
                    order,
                    ridge,
                    ..FitOptions::default()
                },
            )?;
            let created = if no_meta {
                None
            } else {
                let secs = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                Some(format!("unix:{secs}"))
            };
            let meta = ModelMetadata {
                k0: Some(k0),
                k0_grid: grid_used,
                created,
            };
            save_model(&out, &model, &meta)?;
            println!("k0={k0}");
            println!("d_min={}", model.min_eigenvalue);
            println!("b_variance={}", model.b_variance);
            for w in &model.warnings {
                println!("warning={w}");
            }
            Ok(())
        }
        Command::Predict { model, input, out } => {
            let (model, _) = load_model(&model)?;
            let table = read_numeric_csv(&input)?;
            let rows = model_rows(&model.column_names, &table)?;
            let fused = predict_bmean(&model, &rows);
            let mut headers = table.headers.clone();
            headers.push("b_mean".to_string());
            let mut columns: Vec<DVector<f64>> = (0..table.data.ncols())
                .map(|j| table.data.column(j).into_owned())
                .collect();
            columns.push(fused);
            emit(out.as_deref(), &format_csv(&headers, &columns))
        }
        Command::Transforms { model, input, out } => {
            let (model, _) = load_model(&model)?;
            let table = read_numeric_csv(&input)?;
            let rows = model_rows(&model.column_names, &table)?;
            let transforms = component_transforms(&model, &rows);
            let headers: Vec<String> = model
                .column_names
                .iter()
                .map(|c| format!("f_hat_{c}"))
                .collect();
            let columns: Vec<DVector<f64>> = (0..transforms.ncols())
                .map(|j| transforms.column(j).into_owned())
                .collect();
            emit(out.as_deref(), &format_csv(&headers, &columns))
        }
        Command::Bvar { model, input, out } => {
            let (model, _) = load_model(&model)?;
            let table = read_numeric_csv(&input)?;
            let rows = model_rows(&model.column_names, &table)?;
            let fusion = FusionInput::new(rows, model.column_names.clone())?;
            let (per_row, aggregate) = b_variance(&model, &fusion);
            println!("aggregate_b_variance={aggregate}");
            emit(
                out.as_deref(),
                &format_csv(&["b_variance".to_string()], &[per_row]),
            )
        }
        Command::SelectKnots {
            input,
            grid,
            order,
            ridge,
            out,
        } => {
            let (fusion, _) = load_input(&input)?;
            let grid = parse_grid(&grid)?;
            let (best, table) = select_k0(&fusion, &grid, order, ridge)?;
            println!("best_k0={best}");
            let mut text = String::from("k0,b_variance,d_min,error\n");
            for row in table {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    row.k0,
                    row.b_variance.map_or(String::new(), |v| format!("{v}")),
                    row.min_eigenvalue
                        .map_or(String::new(), |v| format!("{v}")),
                    row.error.map_or(String::new(), |e| format!("\"{}\"", e.replace('"', "'")))
                ));
            }
            emit(out.as_deref(), &text)
        }
        Command::Infer {
            model,
            input,
            at,
            level,
            max_dim,
            out,
        } => {
            let (model, _) = load_model(&model)?;
            let table = read_numeric_csv(&input)?;
            let rows = model_rows(&model.column_names, &table)?;
            let fusion = FusionInput::new(rows, model.column_names.clone())?;
            let asy = fit_asymptotics(&model, &fusion, max_dim)?;

            let at_table = read_numeric_csv(&at)?;
            let at_rows = model_rows(&model.column_names, &at_table)?;
            let mut mu = Vec::new();
            let mut sigma = Vec::new();
            let mut lower = Vec::new();
            let mut upper = Vec::new();
            for i in 0..at_rows.nrows() {
                let row: Vec<f64> = (0..at_rows.ncols()).map(|j| at_rows[(i, j)]).collect();
                let ci = sigma_mu_ci(&model, &asy, &row, level)?;
                mu.push(ci.mu_hat);
                sigma.push(ci.sigma_mu);
                lower.push(ci.lower);
                upper.push(ci.upper);
            }
            let headers = ["mu_hat", "sigma_mu", "lower", "upper", "level", "n"]
                .map(String::from)
                .to_vec();
            let n_rows = mu.len();
            let columns = vec![
                DVector::from_vec(mu),
                DVector::from_vec(sigma),
                DVector::from_vec(lower),
                DVector::from_vec(upper),
                DVector::from_element(n_rows, level),
                DVector::from_element(n_rows, asy.n as f64),
            ];
            emit(out.as_deref(), &format_csv(&headers, &columns))
        }
        Command::Simulate {
            n,
            k,
            latent,
            family,
            noise_scale,
            seed,
            out,
            latent_out,
        } => {
            let mut cfg = SimConfig::new(n, k, parse_latent(&latent)?, parse_family(&family)?, seed);
            cfg.noise_scale = noise_scale;
            let y = gen_latent(&cfg)?;
            let data = gen_measurements(&y, &cfg)?;
            let headers: Vec<String> = (1..=k).map(|j| format!("w{j}")).collect();
            let columns: Vec<DVector<f64>> =
                (0..k).map(|j| data.column(j).into_owned()).collect();
            emit(Some(&out), &format_csv(&headers, &columns))?;
            emit(
                Some(&latent_out),
                &format_csv(&["latent".to_string()], &[y]),
            )
        }
        Command::Bench {
            n,
            k,
            latent,
            family,
            noise_scale,
            reps,
            k0_grid,
            order,
            seed,
            out_dir,
        } => {
            let ns = parse_usize_list(&n)?;
            let ks = parse_usize_list(&k)?;
            let latents: Vec<Latent> = latent
                .split(',')
                .map(parse_latent)
                .collect::<Result<_, _>>()?;
            let families: Vec<TransformFamily> = family
                .split(',')
                .map(parse_family)
                .collect::<Result<_, _>>()?;
            let grid = parse_grid(&k0_grid)?;

            let mut settings = Vec::new();
            for &n_i in &ns {
                for &k_i in &ks {
                    for &lat in &latents {
                        for &fam in &families {
                            let mut cfg = SimConfig::new(n_i, k_i, lat, fam, seed);
                            cfg.noise_scale = noise_scale;
                            settings.push(cfg);
                        }
                    }
                }
            }
            let report = run_benchmark(&settings, reps, &grid, order)?;
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| CliError::data(format!("creating {}: {e}", out_dir.display())))?;
            emit(
                Some(&out_dir.join("bench_tidy.csv")),
                &report.to_tidy_csv(),
            )?;
            emit(
                Some(&out_dir.join("bench_summary.csv")),
                &report.to_summary_csv(),
            )?;
            for cell in &report.cells {
                for m in &cell.methods {
                    println!(
                        "n={} K={} latent={} family={} method={} mean_abs_corr={:.4}",
                        cell.cfg.n, cell.cfg.k, cell.cfg.latent, cell.cfg.family, m.method, m.mean
                    );
                }
            }
            Ok(())
        }
        Command::R2 {
            fused,
            fused_col,
            response,
            response_col,
            log_response,
            out,
        } => {
            let fused_table = read_numeric_csv(&fused)?;
            let x = fused_table.column_by_name(&fused_col)?;
            let resp_table = read_numeric_csv(&response)?;
            let g = match response_col {
                Some(name) => resp_table.column_by_name(&name)?,
                None => resp_table.data.column(0).iter().cloned().collect(),
            };
            let fit = adjusted_r2(&x, &g, log_response)?;
            let headers = ["alpha0", "alpha1", "r2", "adj_r2"].map(String::from).to_vec();
            let columns = vec![
                DVector::from_element(1, fit.alpha0),
                DVector::from_element(1, fit.alpha1),
                DVector::from_element(1, fit.r2),
                DVector::from_element(1, fit.adj_r2),
            ];
            emit(out.as_deref(), &format_csv(&headers, &columns))
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!("{e}");
            eprintln!(
                "bscaling-error code=1 kind=usage detail={:?}",
                e.kind().to_string()
            );
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!(
            "bscaling-error code={} kind={} detail={:?}",
            e.code, e.kind, e.detail
        );
        std::process::exit(e.code);
    }
}
