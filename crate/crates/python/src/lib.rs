use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fracheat::cli::parse_config_str;
use fracheat::density::{self, BoundId, ExperimentConfig};
use fracheat::malliavin::{malliavin_h_norm, malliavin_matrix_at};
use fracheat::seed::path_seed;
use fracheat::{Error, SamplingMethod};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::InvalidParameter(_)
        | Error::OutOfDomain { .. }
        | Error::Shape { .. }
        | Error::Parse { .. }
        | Error::Validation(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn config(json: Option<&str>) -> PyResult<ExperimentConfig> {
    parse_config_str(json.unwrap_or("{}")).map_err(to_py)
}

/// Field in the sine basis `e_n = √2 sin(πnξ)`.
#[pyclass(name = "SpectralField", from_py_object)]
#[derive(Clone)]
struct PySpectralField {
    inner: fracheat::SpectralField,
}

#[pymethods]
impl PySpectralField {
    #[new]
    fn new(coeffs: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: fracheat::SpectralField::new(coeffs).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn basis(n_modes: usize, k: usize) -> PyResult<Self> {
        Ok(Self {
            inner: fracheat::SpectralField::basis(n_modes, k).map_err(to_py)?,
        })
    }

    #[getter]
    fn coeffs(&self) -> Vec<f64> {
        self.inner.coeffs().to_vec()
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.inner.n_modes()
    }

    fn sobolev_norm(&self, alpha: f64) -> PyResult<f64> {
        self.inner.sobolev_norm(alpha).map_err(to_py)
    }

    fn semigroup_apply(&self, t: f64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.semigroup_apply(t).map_err(to_py)?,
        })
    }

    fn evaluate(&self, xi: f64) -> PyResult<f64> {
        self.inner.evaluate(xi).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.n_modes()
    }

    fn __repr__(&self) -> String {
        format!("SpectralField(n_modes={})", self.inner.n_modes())
    }
}

/// fBm covariance `½(s^{2H} + t^{2H} − |t−s|^{2H})`.
#[pyfunction]
fn covariance(s: f64, t: f64, hurst: f64) -> PyResult<f64> {
    fracheat::covariance(s, t, hurst).map_err(to_py)
}

/// One fBm path on `[0,1]`; returns `(times, components)`.
#[pyfunction]
#[pyo3(signature = (steps, hurst, d=1, seed=0, method="factorization"))]
fn sample_fbm(steps: usize, hurst: f64, d: usize, seed: u64, method: &str) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let method: SamplingMethod = method.parse().map_err(to_py)?;
    let x = fracheat::sample_path(steps, hurst, d, seed, method).map_err(to_py)?;
    Ok((x.times(), x.components().to_vec()))
}

/// Solves one path of the configured equation; returns `(times, coefficient rows)`.
#[pyfunction]
#[pyo3(signature = (config_json=None, path_index=0))]
fn solve(py: Python<'_>, config_json: Option<&str>, path_index: u64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let cfg = config(config_json)?;
    py.detach(|| {
        let model = cfg.model()?;
        let x = cfg.sampler()?.sample(cfg.n_components, path_seed(cfg.seed, path_index));
        let y = model.solve(&cfg.initial_condition(), &x)?;
        Ok((x.times(), y.fields().iter().map(|f| f.coeffs().to_vec()).collect()))
    })
    .map_err(to_py)
}

/// Malliavin matrix of `Y_1(ξ)` along one path: `{"s": [...], "entries": [[...]], "h_norm": ...}`.
#[pyfunction]
#[pyo3(signature = (config_json=None, path_index=0))]
fn malliavin<'py>(py: Python<'py>, config_json: Option<&str>, path_index: u64) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(config_json)?;
    let (m, h) = py
        .detach(|| {
            let model = cfg.model()?;
            let x = cfg.sampler()?.sample(cfg.n_components, path_seed(cfg.seed, path_index));
            let y = model.solve(&cfg.initial_condition(), &x)?;
            let lin = model.linearize(&y)?;
            let m = malliavin_matrix_at(&model, &lin, &x, cfg.xi, x.steps(), cfg.source_stride)?;
            let h = malliavin_h_norm(&m)?;
            Ok((m, h))
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("s", (0..m.n_sources()).map(|k| m.source_time(k)).collect::<Vec<_>>())?;
    out.set_item("entries", m.entries.clone())?;
    out.set_item("h_norm", h)?;
    out.set_item("sup_norm", m.sup_norm())?;
    Ok(out)
}

/// Runs an ensemble without bound samples: `{"samples", "h_norms", "failures"}`.
#[pyfunction]
#[pyo3(signature = (config_json=None))]
fn run_ensemble<'py>(py: Python<'py>, config_json: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(config_json)?;
    let e = py.detach(|| density::run_ensemble_with(&cfg, &[])).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("samples", e.samples())?;
    out.set_item("h_norms", e.h_norms())?;
    out.set_item("failures", e.failures.len())?;
    Ok(out)
}

/// Gaussian KDE; `bandwidth=None` uses the rule of thumb. Returns `(points, density)`.
#[pyfunction]
#[pyo3(signature = (samples, bandwidth=None))]
fn kde(samples: Vec<f64>, bandwidth: Option<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let h = match bandwidth {
        Some(h) => h,
        None => density::rule_of_thumb_bandwidth(&samples).map_err(to_py)?,
    };
    let d = density::kde(&samples, h).map_err(to_py)?;
    Ok((d.points, d.density))
}

/// `(estimate, half_estimate, stable)`.
#[pyfunction]
fn inverse_moment_estimate(h_norms: Vec<f64>, p: f64) -> PyResult<(f64, f64, bool)> {
    let r = density::inverse_moment_estimate(&h_norms, p).map_err(to_py)?;
    Ok((r.estimate, r.half_estimate, r.stable))
}

/// Fit-and-validate one bound on a fresh ensemble: `{"constants", "validate_coverage", "max_ratio"}`.
#[pyfunction]
#[pyo3(signature = (bound_id, config_json=None))]
fn verify_bound<'py>(py: Python<'py>, bound_id: &str, config_json: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let id: BoundId = bound_id.parse().map_err(to_py)?;
    let cfg = config(config_json)?;
    let rep = py
        .detach(|| {
            let e = density::run_ensemble_with(&cfg, &[id])?;
            density::verify_bound(id, &e)
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("constants", rep.constants)?;
    out.set_item("train_coverage", rep.train_coverage)?;
    out.set_item("validate_coverage", rep.validate_coverage)?;
    out.set_item("max_ratio", rep.max_ratio)?;
    Ok(out)
}

/// Default experiment config as JSON.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_json()
}

#[pymodule]
fn pyfracheat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpectralField>()?;
    m.add_function(wrap_pyfunction!(covariance, m)?)?;
    m.add_function(wrap_pyfunction!(sample_fbm, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(malliavin, m)?)?;
    m.add_function(wrap_pyfunction!(run_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(kde, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_moment_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(verify_bound, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
