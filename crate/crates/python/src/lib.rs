//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use qiv_core::data::{standardize as std_dataset, CoefficientVector, Dataset};
use qiv_core::instrument::{CrossGram, Method};
use qiv_core::pipeline::{self, BandwidthMode, DMode, InstrumentConfig, PipelineConfig};
use qiv_core::plm;
use qiv_core::selector::{self, LambdaMode, SelectorConfig};
use qiv_core::simulator::{run_experiment, ExperimentConfig};

create_exception!(qiv, QivError, PyException);

fn err(e: qiv_core::error::QivError) -> PyErr {
    QivError::new_err(format!("{}: {e}", e.code()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

type Standardized = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

/// Column-standardized predictors plus the means and scales used.
#[pyfunction]
fn standardize(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Standardized> {
    let ds = Dataset::new(matrix(x)?, DVector::from_vec(y)).map_err(err)?;
    let s = std_dataset(&ds).map_err(err)?;
    Ok((rows(s.x()), s.column_means().iter().copied().collect(), s.column_scales().iter().copied().collect()))
}

#[pyfunction]
#[pyo3(signature = (x, y, lam, tol=selector::DEFAULT_LP_TOLERANCE))]
fn dantzig_select(x: Vec<Vec<f64>>, y: Vec<f64>, lam: f64, tol: f64) -> PyResult<Vec<f64>> {
    Ok(selector::dantzig_select(&matrix(x)?, &DVector::from_vec(y), lam, tol).map_err(err)?.0)
}

#[pyfunction]
#[pyo3(signature = (x, realizations=20, seed=0))]
fn default_lambda(x: Vec<Vec<f64>>, realizations: usize, seed: u64) -> PyResult<f64> {
    Ok(selector::default_lambda(&matrix(x)?, realizations, seed))
}

#[pyfunction]
fn threshold_select(beta: Vec<f64>, tau: f64) -> Vec<usize> {
    selector::threshold_select(&CoefficientVector(beta), tau).into()
}

#[pyfunction]
fn ustat_cross_gram(ztilde: Vec<Vec<f64>>, u: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&qiv_core::instrument::ustat_cross_gram(&matrix(ztilde)?, &matrix(u)?).map_err(err)?))
}

#[pyfunction]
fn nw_smooth(values: Vec<f64>, v: Vec<Vec<f64>>, h: f64) -> PyResult<Vec<f64>> {
    if h.is_nan() || h <= 0.0 {
        return Err(PyValueError::new_err("bandwidth must be positive"));
    }
    Ok(plm::nw_smooth(&DVector::from_vec(values), &matrix(v)?, h).iter().copied().collect())
}

/// Partially linear fit `Y = θᵀZ + g(V) + ξ`.
#[pyclass(name = "PlmFit")]
struct PyPlmFit(plm::PlmFit);

#[pymethods]
impl PyPlmFit {
    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.0.theta_hat.clone()
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.0.h
    }

    #[getter]
    fn sigma_sq(&self) -> f64 {
        self.0.sigma_v_sq
    }

    #[getter]
    fn covariance(&self) -> Vec<Vec<f64>> {
        rows(&self.0.asym_cov)
    }

    #[pyo3(signature = (level=0.95))]
    fn confidence_intervals(&self, level: f64) -> PyResult<Vec<(f64, f64)>> {
        plm::confidence_intervals(&self.0, level).map_err(err)
    }

    fn g(&self, v: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.0.g_at(&matrix(v)?).map_err(err)?.0.iter().copied().collect())
    }
}

/// Fits the partially linear model; `h=None` picks the bandwidth by GCV.
#[pyfunction]
#[pyo3(signature = (z, y, v, h=None))]
fn fit_plm(z: Vec<Vec<f64>>, y: Vec<f64>, v: Vec<Vec<f64>>, h: Option<f64>) -> PyResult<PyPlmFit> {
    let (z, y, v) = (matrix(z)?, DVector::from_vec(y), matrix(v)?);
    let h = match h {
        Some(h) => h,
        None => plm::gcv_bandwidth(&z, &y, &v, &plm::default_grid(&v)).map_err(err)?.h,
    };
    Ok(PyPlmFit(plm::fit_plm(&z, &y, &v, h, None).map_err(err)?))
}

/// Selection, instrument and partially linear fit on raw data.
#[pyclass]
struct Model(pipeline::PipelineFit);

#[pymethods]
impl Model {
    #[staticmethod]
    #[pyo3(signature = (x, y, method="m1", lam=None, tau=0.1, d=None, bandwidth=None, cross_gram="full", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        method: &str,
        lam: Option<f64>,
        tau: f64,
        d: Option<usize>,
        bandwidth: Option<f64>,
        cross_gram: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let method = match method {
            "m1" => Method::Method1,
            "m2" => Method::Method2,
            other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
        };
        let cross_gram = match cross_gram {
            "full" => CrossGram::Full,
            "removed-block" => CrossGram::RemovedBlock,
            other => return Err(PyValueError::new_err(format!("unknown cross_gram {other:?}"))),
        };
        let config = PipelineConfig {
            selector: SelectorConfig {
                lambda: lam.map_or(LambdaMode::default(), LambdaMode::Fixed),
                tau,
                seed,
                ..SelectorConfig::default()
            },
            instrument: InstrumentConfig {
                method,
                d: d.map_or(DMode::default(), DMode::Fixed),
                cross_gram,
                ..InstrumentConfig::default()
            },
            bandwidth: bandwidth.map_or(BandwidthMode::default(), BandwidthMode::Fixed),
        };
        let ds = Dataset::new(matrix(x)?, DVector::from_vec(y)).map_err(err)?;
        Ok(Model(pipeline::fit_pipeline(&ds, &config).map_err(err)?))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Model).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Zero-based indices of the kept predictors.
    #[getter]
    fn selected(&self) -> Vec<usize> {
        self.0.selected().as_slice().to_vec()
    }

    /// Coefficients of the kept predictors on the raw scale.
    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.0.theta_raw.clone()
    }

    #[getter]
    fn theta_standardized(&self) -> Vec<f64> {
        self.0.adjusted.plm.theta_hat.clone()
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.0.adjusted.plm.h
    }

    #[getter]
    fn rank(&self) -> usize {
        self.0.adjusted.plan.rank
    }

    #[getter]
    fn lambda_used(&self) -> f64 {
        self.0.selection.lambda_used
    }

    /// Intervals for the raw-scale coefficients.
    #[pyo3(signature = (level=0.95))]
    fn confidence_intervals(&self, level: f64) -> PyResult<Vec<(f64, f64)>> {
        let ci = plm::confidence_intervals(&self.0.adjusted.plm, level).map_err(err)?;
        Ok(ci
            .into_iter()
            .zip(self.0.selected().iter())
            .map(|((lo, hi), j)| (lo / self.0.column_scales[j], hi / self.0.column_scales[j]))
            .collect())
    }

    /// Adjusted, working and least-squares predictions for raw predictors.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (b, _) = self.0.predict(&matrix(x)?).map_err(err)?;
        Ok((b.y_adjusted, b.y_working, b.y_ls))
    }
}

/// Runs an experiment config (JSON text) and returns the metrics table as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, reps=None))]
fn simulate(py: Python<'_>, config_json: &str, reps: Option<usize>) -> PyResult<String> {
    let mut config: ExperimentConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(r) = reps {
        config.reps = r;
    }
    let table = py.allow_threads(|| run_experiment(&config)).map_err(err)?;
    serde_json::to_string(&table).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn qiv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("QivError", m.py().get_type::<QivError>())?;
    m.add_class::<Model>()?;
    m.add_class::<PyPlmFit>()?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(dantzig_select, m)?)?;
    m.add_function(wrap_pyfunction!(default_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_select, m)?)?;
    m.add_function(wrap_pyfunction!(ustat_cross_gram, m)?)?;
    m.add_function(wrap_pyfunction!(nw_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(fit_plm, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
