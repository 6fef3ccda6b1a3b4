//! Python bindings: problems, processes, certificates, envelope reports and
//! needle studies. Reports cross the boundary as plain dicts.

use std::path::PathBuf;

use octool_core::config::ProblemFile;
use octool_core::envelope::{envelope_directional, envelope_gradient, value_fd_oracle, AnalyticFamily, ShootingFamily, SolutionFamily};
use octool_core::exprdiff::{bind_problem, parse, ExprDims, ExprSources, Point, Scope};
use octool_core::flow::{expansion_residual_study, first_order_map, simulate as simulate_process, SpikeList};
use octool_core::piecewise::Grid;
use octool_core::pmp::{shooting_solve, verify_certificate, CertificateInputs, ShootingOptions};
use octool_core::problem::{criterion as criterion_value, validate_process};
use octool_core::{builtins, BolzaProblem, ControlSet, DerivMode, OcError, PiecewiseFn};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

create_exception!(octool, OctoolError, PyException);

fn err(e: OcError) -> PyErr {
    match e {
        OcError::Config(_) | OcError::Syntax { .. } | OcError::UnknownIdentifier { .. } | OcError::Dimension { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => OctoolError::new_err(other.to_string()),
    }
}

/// Serializes through JSON into Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| OctoolError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

#[pyclass(name = "Problem", frozen, skip_from_py_object, module = "octool")]
#[derive(Clone)]
struct PyProblem {
    inner: BolzaProblem,
    builtin: bool,
}

#[pymethods]
impl PyProblem {
    /// One of "lq_scalar", "steering", "constant_drift".
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: builtins::by_name(name).map_err(err)?,
            builtin: true,
        })
    }

    /// Problem file in JSON or TOML.
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let file = ProblemFile::load(&path).map_err(err)?;
        Ok(Self {
            inner: file.problem().map_err(err)?,
            builtin: file.builtin_name().is_some(),
        })
    }

    /// Problem from expression strings; `g` lists g0, g1, ..., gm.
    #[staticmethod]
    #[pyo3(signature = (f0, f, xi0, horizon, control_dim, param_dim = 0, g = vec![], h = vec![], lower = None, upper = None, deriv_mode = "dual-ad"))]
    #[allow(clippy::too_many_arguments)]
    fn from_exprs(
        f0: String,
        f: Vec<String>,
        xi0: Vec<f64>,
        horizon: f64,
        control_dim: usize,
        param_dim: usize,
        g: Vec<String>,
        h: Vec<String>,
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
        deriv_mode: &str,
    ) -> PyResult<Self> {
        let mode = match deriv_mode {
            "dual-ad" => DerivMode::DualAd,
            "central-fd" => DerivMode::CentralFd,
            "analytic" => DerivMode::Analytic,
            other => return Err(PyValueError::new_err(format!("unknown deriv_mode `{other}`"))),
        };
        let control_set = match (lower, upper) {
            (Some(lower), Some(upper)) => ControlSet::Box { lower, upper },
            (None, None) => ControlSet::open(),
            _ => return Err(PyValueError::new_err("give both `lower` and `upper` or neither")),
        };
        let dims = ExprDims {
            state: xi0.len(),
            control: control_dim,
            param: param_dim,
        };
        let src = ExprSources { f0, f, g, h };
        Ok(Self {
            inner: bind_problem("expr", &src, dims, horizon, xi0, control_set, mode).map_err(err)?,
            builtin: false,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    /// State, control and parameter dimensions and constraint counts.
    #[getter]
    fn dims<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.dims())
    }

    fn __repr__(&self) -> String {
        let d = self.inner.dims();
        format!(
            "Problem(name={:?}, horizon={}, n={}, mu={}, np={}, m={}, q={})",
            self.inner.name, self.inner.horizon, d.state, d.control, d.param, d.inequalities, d.equalities
        )
    }
}

#[pyclass(name = "Process", frozen, skip_from_py_object, module = "octool")]
#[derive(Clone)]
struct PyProcess {
    inner: octool_core::Process,
}

#[pymethods]
impl PyProcess {
    fn state(&self, t: f64) -> Vec<f64> {
        self.inner.x.value_at(t)
    }

    fn control(&self, t: f64) -> Vec<f64> {
        self.inner.u.value_at(t)
    }

    #[getter]
    fn pi(&self) -> Vec<f64> {
        self.inner.pi.clone()
    }

    #[getter]
    fn breakpoints(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.segments().map_err(err)?.0.breakpoints().to_vec())
    }

    /// `(t, x, u)` rows, `per_segment` samples per segment plus `T`.
    #[pyo3(signature = (per_segment = 16))]
    fn samples(&self, per_segment: usize) -> PyResult<Vec<(f64, Vec<f64>, Vec<f64>)>> {
        let grid = self.inner.segments().map_err(err)?.0;
        Ok(grid
            .sample_times(per_segment)
            .into_iter()
            .map(|t| (t, self.inner.x.value_at(t), self.inner.u.value_at(t)))
            .collect())
    }
}

/// Integrates the state for a control given as expressions in `t` and `p<i>`.
#[pyfunction]
fn simulate_exprs(py: Python<'_>, problem: &PyProblem, control: Vec<String>, pi: Vec<f64>) -> PyResult<PyProcess> {
    let mu = problem.inner.dims().control;
    if control.len() != mu {
        return Err(PyValueError::new_err(format!("expected {mu} control expressions, got {}", control.len())));
    }
    let scope = Scope::running(0, 0, pi.len());
    let exprs = control
        .iter()
        .map(|s| parse(s, &scope).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    let p = problem.inner.clone();
    py.detach(move || {
        let pi_c = pi.clone();
        let u = PiecewiseFn::from_fn(p.horizon, mu, move |t| {
            let at = Point { t, x: &[], u: &[], p: &pi_c };
            exprs.iter().map(|e| e.eval(&at, None).unwrap_or(f64::NAN)).collect()
        })?;
        simulate_process(&p, &u, &pi)
    })
    .map(|inner| PyProcess { inner })
    .map_err(err)
}

/// Integrates the state for a piecewise-constant control.
#[pyfunction]
fn simulate_steps(py: Python<'_>, problem: &PyProblem, breakpoints: Vec<f64>, values: Vec<Vec<f64>>, pi: Vec<f64>) -> PyResult<PyProcess> {
    let p = problem.inner.clone();
    py.detach(move || {
        let u = PiecewiseFn::step(Grid::with_interior(p.horizon, &breakpoints)?, values)?;
        simulate_process(&p, &u, &pi)
    })
    .map(|inner| PyProcess { inner })
    .map_err(err)
}

/// Known optimum of a builtin problem.
#[pyfunction]
fn reference_process(problem: &PyProblem, pi: Vec<f64>) -> PyResult<PyProcess> {
    builtins::reference_process(&problem.inner, &pi)
        .map(|inner| PyProcess { inner })
        .map_err(err)
}

#[pyfunction]
fn criterion(problem: &PyProblem, process: &PyProcess) -> PyResult<f64> {
    criterion_value(&problem.inner, &process.inner).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (problem, process, tol = 1e-8))]
fn feasibility<'py>(py: Python<'py>, problem: &PyProblem, process: &PyProcess, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &validate_process(&problem.inner, &process.inner, tol).map_err(err)?)
}

/// Indirect shooting. Returns a dict with `process`, `multipliers`,
/// `initial_adjoint`, `iterations` and `residual_history`.
#[pyfunction]
#[pyo3(signature = (problem, pi, p0 = None, mu = None, tol = 1e-10))]
fn shoot<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    pi: Vec<f64>,
    p0: Option<Vec<f64>>,
    mu: Option<Vec<f64>>,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let d = problem.inner.dims();
    let p0 = p0.unwrap_or_else(|| vec![0.0; d.state]);
    let mu = mu.unwrap_or_else(|| vec![0.0; d.equalities]);
    let p = problem.inner.clone();
    let opts = ShootingOptions {
        tol,
        ..ShootingOptions::default()
    };
    let r = py.detach(move || shooting_solve(&p, &pi, (&p0, &mu), &opts)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("multipliers", to_py(py, &r.multipliers)?)?;
    out.set_item("initial_adjoint", r.adjoint.initial())?;
    out.set_item("iterations", r.iterations)?;
    out.set_item("residual_history", r.residual_history.clone())?;
    out.set_item("process", PyProcess { inner: r.process }.into_pyobject(py)?)?;
    Ok(out)
}

/// Checks the necessary conditions along `process`; returns the certificate
/// as a dict with an added `exit_code` (0 pass, 2 fail, 3 degenerate).
#[pyfunction]
#[pyo3(signature = (problem, process, tol = 1e-6, seed = 0x5EED))]
fn verify<'py>(py: Python<'py>, problem: &PyProblem, process: &PyProcess, tol: f64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let (p, proc) = (problem.inner.clone(), process.inner.clone());
    let cert = py.detach(move || {
        verify_certificate(
            &p,
            &proc,
            &CertificateInputs {
                tol,
                seed,
                ..CertificateInputs::default()
            },
        )
    });
    let out = to_py(py, &cert)?;
    out.set_item("exit_code", cert.exit_code())?;
    Ok(out)
}

fn family(problem: &PyProblem, pi: &[f64]) -> octool_core::Result<Box<dyn SolutionFamily>> {
    if problem.builtin {
        return Ok(Box::new(AnalyticFamily::builtin(&problem.inner)));
    }
    let d = problem.inner.dims();
    let (p0, mu) = (vec![0.0; d.state], vec![0.0; d.equalities]);
    Ok(Box::new(ShootingFamily::new(&problem.inner, pi, (&p0, &mu), ShootingOptions::default())?))
}

/// Envelope-formula directional derivative of the optimal value, with a
/// finite-difference table. Builtins use their closed-form optima, other
/// problems indirect shooting.
#[pyfunction]
fn envelope<'py>(py: Python<'py>, problem: &PyProblem, pi: Vec<f64>, dpi: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let pr = problem.clone();
    let (report, table) = py
        .detach(move || {
            let fam = family(&pr, &pi)?;
            let report = envelope_directional(&pr.inner, fam.as_ref(), &pi, &dpi)?;
            let table = value_fd_oracle(&pr.inner, fam.as_ref(), &pi, &dpi, &[1e-2, 1e-3, 1e-4, 1e-5])?;
            Ok::<_, OcError>((report, table))
        })
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("envelope", to_py(py, &report)?)?;
    out.set_item("fd_table", to_py(py, &table)?)?;
    Ok(out)
}

/// Full gradient of the optimal value with its linearity check.
#[pyfunction]
fn gradient<'py>(py: Python<'py>, problem: &PyProblem, pi: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let pr = problem.clone();
    let rep = py
        .detach(move || {
            let fam = family(&pr, &pi)?;
            envelope_gradient(&pr.inner, fam.as_ref(), &pi)
        })
        .map_err(err)?;
    to_py(py, &rep)
}

/// First-order needle map and expansion residuals over amplitude levels.
#[pyfunction]
fn needle_study<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    process: &PyProcess,
    spikes: Vec<(f64, Vec<f64>)>,
    amplitudes: Vec<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let (p, proc) = (problem.inner.clone(), process.inner.clone());
    let (map, study) = py
        .detach(move || {
            let list = SpikeList::new(spikes, p.horizon, &p.control_set)?;
            let map = first_order_map(&p, &proc, &list)?;
            let study = expansion_residual_study(&p, &proc, &list, &amplitudes)?;
            Ok::<_, OcError>((map, study))
        })
        .map_err(err)?;
    let out = PyDict::new(py);
    let rows: Vec<Vec<f64>> = (0..map.nrows()).map(|i| map.row(i).iter().copied().collect()).collect();
    out.set_item("first_order_map", rows)?;
    out.set_item("study", to_py(py, &study)?)?;
    Ok(out)
}

/// Value and partials `[d/dt, d/dx..., d/du..., d/dp...]` of an expression.
#[pyfunction]
#[pyo3(signature = (src, x, u = vec![], p = vec![], t = 0.0))]
fn eval_dual(src: &str, x: Vec<f64>, u: Vec<f64>, p: Vec<f64>, t: f64) -> PyResult<(f64, Vec<f64>)> {
    let e = parse(src, &Scope::running(x.len(), u.len(), p.len())).map_err(err)?;
    let r = e.eval_dual(&Point { t, x: &x, u: &u, p: &p }, Some(src)).map_err(err)?;
    Ok((r.value, r.grad))
}

#[pymodule]
fn octool(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OctoolError", m.py().get_type::<OctoolError>())?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyProcess>()?;
    m.add_function(wrap_pyfunction!(simulate_exprs, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_steps, m)?)?;
    m.add_function(wrap_pyfunction!(reference_process, m)?)?;
    m.add_function(wrap_pyfunction!(criterion, m)?)?;
    m.add_function(wrap_pyfunction!(feasibility, m)?)?;
    m.add_function(wrap_pyfunction!(shoot, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(envelope, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(needle_study, m)?)?;
    m.add_function(wrap_pyfunction!(eval_dual, m)?)?;
    Ok(())
}
