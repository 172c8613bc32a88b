use hypok_core::besov::{s_perimeter, BoxSet};
use hypok_core::extension::{bessel_kernel, harnack_factor};
use hypok_core::fractional::fractional_power;
use hypok_core::kernel::{heat_kernel, volume};
use hypok_core::linalg::Matrix;
use hypok_core::operator::gramians;
use hypok_core::semigroup::QuadratureSpec;
use hypok_core::suite::{parse_config, report_csv, run_verification, ScenarioConfig};
use hypok_core::testfuncs::TestFunction;
use hypok_core::{Error, OperatorSpec};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Domain(_) | Error::Precondition(_) | Error::NotHypoelliptic(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyArithmeticError::new_err(e.to_string()),
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, r: &[Vec<f64>]) -> PyResult<Matrix> {
    let n = r.len();
    if n == 0 || r.iter().any(|row| row.len() != n) {
        return Err(PyValueError::new_err(format!("{name} must be a non-empty square matrix")));
    }
    Ok(Matrix::from_fn(n, n, |i, j| r[i][j]))
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Operator `tr(Q D^2 u) + <BX, Du>`.
#[pyclass(name = "Operator", frozen)]
struct PyOperator {
    spec: OperatorSpec,
    quad: QuadratureSpec,
}

impl PyOperator {
    fn wrap(spec: OperatorSpec) -> Self {
        Self { spec, quad: QuadratureSpec::default() }
    }
}

#[pymethods]
impl PyOperator {
    #[new]
    fn new(q: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<Self> {
        OperatorSpec::new(from_rows("q", &q)?, from_rows("b", &b)?).map(Self::wrap).map_err(to_py)
    }

    #[staticmethod]
    fn heat(dim: usize) -> Self {
        Self::wrap(OperatorSpec::heat(dim))
    }

    #[staticmethod]
    fn kolmogorov(n: usize) -> Self {
        Self::wrap(OperatorSpec::kolmogorov(n))
    }

    #[staticmethod]
    fn ornstein_uhlenbeck(dim: usize) -> Self {
        Self::wrap(OperatorSpec::ornstein_uhlenbeck(dim))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.spec.dim
    }

    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        rows(&self.spec.q)
    }

    #[getter]
    fn b(&self) -> Vec<Vec<f64>> {
        rows(&self.spec.b)
    }

    #[getter]
    fn trace_b(&self) -> f64 {
        self.spec.trace_b
    }

    fn is_hypoelliptic(&self) -> bool {
        self.spec.is_hypoelliptic()
    }

    /// Transition density `p(X, Y, t)`.
    fn kernel(&self, x: Vec<f64>, y: Vec<f64>, t: f64) -> PyResult<f64> {
        heat_kernel(&self.spec, &x, &y, t).map(|k| k.value).map_err(to_py)
    }

    /// `{k_t, c_t, exp_tb, det_tk}` at time `t`.
    fn gramians<'py>(&self, py: Python<'py>, t: f64) -> PyResult<Bound<'py, PyDict>> {
        let g = gramians(&self.spec, t).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("k_t", rows(&g.k_t))?;
        d.set_item("c_t", rows(&g.c_t))?;
        d.set_item("exp_tb", rows(&g.exp_tb))?;
        d.set_item("det_tk", g.det_tk)?;
        Ok(d)
    }

    /// Volume of the pseudo-ball of radius `sqrt(t)`.
    fn volume(&self, t: f64) -> PyResult<f64> {
        volume(&self.spec, t).map_err(to_py)
    }

    /// `(-A)^s f(x)` for `f = coeff * exp(-|Y - center|^2 / width^2)`; returns `(value, stderr)`.
    #[pyo3(signature = (s, x, center=None, width=1.0, coeff=1.0))]
    fn fractional_power(&self, s: f64, x: Vec<f64>, center: Option<Vec<f64>>, width: f64, coeff: f64) -> PyResult<(f64, f64)> {
        let center = center.unwrap_or_else(|| vec![0.0; self.spec.dim]);
        let f = TestFunction::gaussian(&center, width, coeff);
        let e = fractional_power(&self.spec, &f, s, &x, &self.quad).map_err(to_py)?;
        Ok((e.value, e.stderr))
    }

    /// s-perimeter of the box `[lo, hi]`.
    fn s_perimeter<'py>(&self, py: Python<'py>, lo: Vec<f64>, hi: Vec<f64>, s: f64) -> PyResult<Bound<'py, PyDict>> {
        let e = BoxSet::new(lo, hi).map_err(to_py)?;
        let p = s_perimeter(&self.spec, &e, s, &self.quad, false).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("value", p.value)?;
        d.set_item("n1", p.n1.value)?;
        d.set_item("n2_squared", p.n2_squared.value)?;
        d.set_item("stderr", p.n1.stderr)?;
        d.set_item("consistent", p.consistent)?;
        Ok(d)
    }

    /// Factor `H` in `u(Y, zeta, s) <= H u(X, z, t)`.
    #[allow(clippy::too_many_arguments)]
    fn harnack_factor(&self, a: f64, y: Vec<f64>, zeta: f64, s: f64, x: Vec<f64>, z: f64, t: f64) -> PyResult<f64> {
        harnack_factor(&self.spec, a, &y, zeta, s, &x, z, t).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Operator(dim={}, q={:?}, b={:?})", self.spec.dim, rows(&self.spec.q), rows(&self.spec.b))
    }
}

/// Bessel extension kernel `p^(a)(z, zeta, t)`.
#[pyfunction(name = "bessel_kernel")]
fn py_bessel_kernel(a: f64, z: f64, zeta: f64, t: f64) -> PyResult<f64> {
    bessel_kernel(a, z, zeta, t).map_err(to_py)
}

fn config(text: &str) -> PyResult<ScenarioConfig> {
    parse_config(text).map_err(to_py)
}

/// Run a JSON scenario; returns `{rows, plot, summary, calibration, seed, quad}`.
#[pyfunction]
fn verify<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let report = run_verification(&config(config_json)?).map_err(to_py)?;
    let text = serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &text)
}

/// Run a JSON scenario and return the report CSV text.
#[pyfunction]
fn verify_csv(config_json: &str) -> PyResult<String> {
    let report = run_verification(&config(config_json)?).map_err(to_py)?;
    report_csv(&report).map_err(to_py)
}

#[pymodule]
fn hypok(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOperator>()?;
    m.add_function(wrap_pyfunction!(py_bessel_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(verify_csv, m)?)?;
    Ok(())
}
