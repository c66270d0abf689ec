//! Python bindings: fit fusion models on NumPy arrays, predict fused values,
//! run the baselines, and compute asymptotic prediction intervals.

use numpy::ndarray::{Array1, Array2};
use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use bscaling::error::Error as CoreError;
use bscaling::fit::{
    b_variance, component_transforms, fit_bscaling_with, predict_bmean, select_k0, FitOptions,
    FittedBScaling, FusionInput,
};
use bscaling::inference::prediction_interval;
use bscaling::model_io::{model_from_json, model_to_json, ModelMetadata};
use bscaling::simlab::{gen_latent, gen_measurements, Latent, SimConfig, TransformFamily};
use nalgebra::DMatrix;

fn to_py_err(e: CoreError) -> PyErr {
    match e {
        CoreError::SingularMatrix(_)
        | CoreError::MemoryBudget(_)
        | CoreError::NegativeVariance(_)
        | CoreError::BenchmarkFailure(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix_from_numpy(data: &PyReadonlyArray2<'_, f64>) -> DMatrix<f64> {
    let view = data.as_array();
    DMatrix::from_fn(view.nrows(), view.ncols(), |i, j| view[(i, j)])
}

fn matrix_to_numpy<'py>(py: Python<'py>, m: &DMatrix<f64>) -> Bound<'py, PyArray2<f64>> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)]).into_pyarray(py)
}

fn vector_to_numpy<'py>(py: Python<'py>, v: &nalgebra::DVector<f64>) -> Bound<'py, PyArray1<f64>> {
    Array1::from_iter(v.iter().cloned()).into_pyarray(py)
}

fn parse_latent(name: &str) -> PyResult<Latent> {
    match name {
        "uniform" => Ok(Latent::Uniform01),
        "normal" => Ok(Latent::StdNormal),
        other => Err(PyValueError::new_err(format!(
            "unknown latent '{other}' (expected 'uniform' or 'normal')"
        ))),
    }
}

fn parse_family(name: &str) -> PyResult<TransformFamily> {
    match name {
        "logit" => Ok(TransformFamily::LogitOnly),
        "mixed" => Ok(TransformFamily::Mixed),
        other => Err(PyValueError::new_err(format!(
            "unknown family '{other}' (expected 'logit' or 'mixed')"
        ))),
    }
}

/// A fitted fusion model.
#[pyclass(name = "Model")]
struct Model {
    inner: FittedBScaling,
}

#[pymethods]
impl Model {
    /// Smallest eigenvalue: the attained disagreement objective.
    #[getter]
    fn d_min(&self) -> f64 {
        self.inner.min_eigenvalue
    }

    /// Aggregate B-variance on the training data.
    #[getter]
    fn b_variance(&self) -> f64 {
        self.inner.b_variance
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.iter().cloned().collect()
    }

    #[getter]
    fn column_names(&self) -> Vec<String> {
        self.inner.column_names.clone()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order
    }

    /// Fused values for a (rows x K) array.
    fn predict<'py>(
        &self,
        py: Python<'py>,
        data: PyReadonlyArray2<'py, f64>,
    ) -> PyResult<Bound<'py, PyArray1<f64>>> {
        let rows = matrix_from_numpy(&data);
        if rows.ncols() != self.inner.k() {
            return Err(PyValueError::new_err(format!(
                "expected {} columns, got {}",
                self.inner.k(),
                rows.ncols()
            )));
        }
        Ok(vector_to_numpy(py, &predict_bmean(&self.inner, &rows)))
    }

    /// Per-measurement transform values for a (rows x K) array.
    fn transforms<'py>(
        &self,
        py: Python<'py>,
        data: PyReadonlyArray2<'py, f64>,
    ) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let rows = matrix_from_numpy(&data);
        if rows.ncols() != self.inner.k() {
            return Err(PyValueError::new_err(format!(
                "expected {} columns, got {}",
                self.inner.k(),
                rows.ncols()
            )));
        }
        Ok(matrix_to_numpy(py, &component_transforms(&self.inner, &rows)))
    }

    /// Per-row disagreement plus its aggregate.
    fn b_variance_rows<'py>(
        &self,
        py: Python<'py>,
        data: PyReadonlyArray2<'py, f64>,
    ) -> PyResult<(Bound<'py, PyArray1<f64>>, f64)> {
        let rows = matrix_from_numpy(&data);
        let input =
            FusionInput::new(rows, self.inner.column_names.clone()).map_err(to_py_err)?;
        let (per_row, aggregate) = b_variance(&self.inner, &input);
        Ok((vector_to_numpy(py, &per_row), aggregate))
    }

    /// Asymptotic prediction interval at one new observation; `data` must be
    /// the training data. Returns (mu_hat, sigma_mu, lower, upper).
    #[pyo3(signature = (data, w_new, level = 0.95, max_dim = None))]
    fn prediction_interval(
        &self,
        data: PyReadonlyArray2<'_, f64>,
        w_new: Vec<f64>,
        level: f64,
        max_dim: Option<usize>,
    ) -> PyResult<(f64, f64, f64, f64)> {
        let rows = matrix_from_numpy(&data);
        let input =
            FusionInput::new(rows, self.inner.column_names.clone()).map_err(to_py_err)?;
        let ci = prediction_interval(&self.inner, &input, &w_new, level, max_dim)
            .map_err(to_py_err)?;
        Ok((ci.mu_hat, ci.sigma_mu, ci.lower, ci.upper))
    }

    /// Serialize to the versioned JSON document.
    fn to_json(&self) -> String {
        model_to_json(&self.inner, &ModelMetadata::default())
    }

    fn save(&self, path: String) -> PyResult<()> {
        bscaling::model_io::save_model(
            std::path::Path::new(&path),
            &self.inner,
            &ModelMetadata::default(),
        )
        .map_err(to_py_err)
    }

    #[staticmethod]
    fn from_json(text: String) -> PyResult<Self> {
        let (inner, _) = model_from_json(&text).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: String) -> PyResult<Self> {
        let (inner, _) =
            bscaling::model_io::load_model(std::path::Path::new(&path)).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(K={}, n={}, d_min={:.6e}, b_variance={:.6e})",
            self.inner.k(),
            self.inner.n,
            self.inner.min_eigenvalue,
            self.inner.b_variance
        )
    }
}

/// Fit the fusion model on a (n x K) array of measurements.
#[pyfunction]
#[pyo3(signature = (data, k0 = 11, order = 4, ridge = 1e-8, column_names = None))]
fn fit(
    data: PyReadonlyArray2<'_, f64>,
    k0: usize,
    order: usize,
    ridge: f64,
    column_names: Option<Vec<String>>,
) -> PyResult<Model> {
    let matrix = matrix_from_numpy(&data);
    let input = match column_names {
        Some(names) => FusionInput::new(matrix, names),
        None => FusionInput::unnamed(matrix),
    }
    .map_err(to_py_err)?;
    let model = fit_bscaling_with(
        &input,
        &FitOptions {
            k0,
            order,
            ridge,
            ..FitOptions::default()
        },
    )
    .map_err(to_py_err)?;
    Ok(Model { inner: model })
}

/// Pick the knot count with the smallest B-variance over a grid.
/// Returns (best_k0, table) with table rows (k0, b_variance, d_min, error).
#[pyfunction]
#[pyo3(signature = (data, grid, order = 4, ridge = 1e-8))]
fn select_knots(
    data: PyReadonlyArray2<'_, f64>,
    grid: Vec<usize>,
    order: usize,
    ridge: f64,
) -> PyResult<(usize, Vec<(usize, Option<f64>, Option<f64>, Option<String>)>)> {
    let input = FusionInput::unnamed(matrix_from_numpy(&data)).map_err(to_py_err)?;
    let (best, table) = select_k0(&input, &grid, order, ridge).map_err(to_py_err)?;
    let rows = table
        .into_iter()
        .map(|r| (r.k0, r.b_variance, r.min_eigenvalue, r.error))
        .collect();
    Ok((best, rows))
}

/// PCA of the columns: (scores, loadings, variances).
#[pyfunction]
fn pca_scores<'py>(
    py: Python<'py>,
    data: PyReadonlyArray2<'py, f64>,
) -> PyResult<(
    Bound<'py, PyArray2<f64>>,
    Bound<'py, PyArray2<f64>>,
    Bound<'py, PyArray1<f64>>,
)> {
    let m = matrix_from_numpy(&data);
    let (scores, loadings, variances) = bscaling::baselines::pca_scores(&m).map_err(to_py_err)?;
    Ok((
        matrix_to_numpy(py, &scores),
        matrix_to_numpy(py, &loadings),
        vector_to_numpy(py, &variances),
    ))
}

/// Best absolute correlation between any score column and y.
#[pyfunction]
fn pc_max_corr(scores: PyReadonlyArray2<'_, f64>, y: PyReadonlyArray1<'_, f64>) -> f64 {
    let m = matrix_from_numpy(&scores);
    let yv: Vec<f64> = y.as_array().iter().cloned().collect();
    bscaling::baselines::pc_max_corr(&m, &yv)
}

/// Classical MDS embedding of the rows into one dimension.
#[pyfunction]
fn mds_embed_1d<'py>(
    py: Python<'py>,
    data: PyReadonlyArray2<'py, f64>,
) -> PyResult<Bound<'py, PyArray1<f64>>> {
    let m = matrix_from_numpy(&data);
    let emb = bscaling::baselines::mds_embed_1d(&m).map_err(to_py_err)?;
    Ok(vector_to_numpy(py, &emb))
}

/// (rho_max, rho_bar0): best and average absolute column correlation with y.
#[pyfunction]
fn corr_summary(
    data: PyReadonlyArray2<'_, f64>,
    y: PyReadonlyArray1<'_, f64>,
) -> PyResult<(f64, f64)> {
    let m = matrix_from_numpy(&data);
    let yv: Vec<f64> = y.as_array().iter().cloned().collect();
    let report = bscaling::baselines::corr_metrics(&m, &Default::default(), &yv)
        .map_err(to_py_err)?;
    Ok((report.rho_max, report.rho_bar0))
}

/// OLS of a (log-)response on one predictor: (alpha0, alpha1, r2, adj_r2).
#[pyfunction]
#[pyo3(signature = (x, g, log_response = false))]
fn adjusted_r2(
    x: PyReadonlyArray1<'_, f64>,
    g: PyReadonlyArray1<'_, f64>,
    log_response: bool,
) -> PyResult<(f64, f64, f64, f64)> {
    let xs: Vec<f64> = x.as_array().iter().cloned().collect();
    let gs: Vec<f64> = g.as_array().iter().cloned().collect();
    let fit = bscaling::diagnostics::adjusted_r2(&xs, &gs, log_response).map_err(to_py_err)?;
    Ok((fit.alpha0, fit.alpha1, fit.r2, fit.adj_r2))
}

/// Draw one synthetic dataset: returns (latent, measurements).
#[pyfunction]
#[pyo3(signature = (n, k, latent = "uniform", family = "logit", noise_scale = 0.1, seed = 17))]
fn simulate<'py>(
    py: Python<'py>,
    n: usize,
    k: usize,
    latent: &str,
    family: &str,
    noise_scale: f64,
    seed: u64,
) -> PyResult<(Bound<'py, PyArray1<f64>>, Bound<'py, PyArray2<f64>>)> {
    let mut cfg = SimConfig::new(n, k, parse_latent(latent)?, parse_family(family)?, seed);
    cfg.noise_scale = noise_scale;
    let y = gen_latent(&cfg).map_err(to_py_err)?;
    let data = gen_measurements(&y, &cfg).map_err(to_py_err)?;
    Ok((vector_to_numpy(py, &y), matrix_to_numpy(py, &data)))
}

#[pymodule]
fn _bscaling(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(select_knots, m)?)?;
    m.add_function(wrap_pyfunction!(pca_scores, m)?)?;
    m.add_function(wrap_pyfunction!(pc_max_corr, m)?)?;
    m.add_function(wrap_pyfunction!(mds_embed_1d, m)?)?;
    m.add_function(wrap_pyfunction!(corr_summary, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_r2, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
