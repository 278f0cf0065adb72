//! Python bindings: systems, grid abstractions, entropies, lower bounds and the reference
//! experiments. Structured results are returned as plain dicts and lists.

use absrate::abstraction::{
    check_inclusion, expected_distortion, BuildOptions, TransitionMode, UniformGridAbstraction,
};
use absrate::bounds::{
    c_constant, distortion_lower_bound, rate_lower_bound, rd_curve, BoundInputs, CMode, Order, DEFAULT_S_GRID,
};
use absrate::dynamics::{Smoothness, SystemDef, SystemSpec};
use absrate::entropy::{entropy_closed_form, entropy_report, entropy_report_mc, EntropyReport};
use absrate::experiments::{self, Nonlinear3dConfig};
use absrate::geometry::BoxRegion;
use absrate::mc::McConfig;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(absrate_py, AbsrateError, PyException, "Numeric or resource failure inside absrate.");

fn to_pyerr(e: absrate::Error) -> PyErr {
    if e.is_config_error() {
        PyValueError::new_err(e.to_string())
    } else {
        AbsrateError::new_err(e.to_string())
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for absrate::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_pyerr)
    }
}

/// Serializes through JSON and hands back the equivalent Python object.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| AbsrateError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

pub fn parse_orders(orders: Option<Vec<f64>>) -> absrate::Result<Vec<Order>> {
    orders.unwrap_or_else(|| DEFAULT_S_GRID.to_vec()).into_iter().map(Order::new).collect()
}

pub fn parse_c_mode(mode: &str) -> absrate::Result<CMode> {
    match mode {
        "prop6" => Ok(CMode::Prop6),
        "high_rate" => Ok(CMode::HighRate),
        other => Err(absrate::Error::InvalidParameter(format!("unknown c mode `{other}`"))),
    }
}

pub fn parse_smoothness(class: &str, pieces: Option<u32>) -> absrate::Result<Smoothness> {
    match (class, pieces) {
        ("affine", None) => Ok(Smoothness::Affine),
        ("lipschitz", None) => Ok(Smoothness::Lipschitz),
        ("piecewise_affine", Some(pieces)) => Ok(Smoothness::PiecewiseAffine { pieces }),
        ("piecewise_affine", None) => {
            Err(absrate::Error::InvalidParameter("piecewise_affine smoothness needs `pieces`".into()))
        }
        (other, _) => Err(absrate::Error::InvalidParameter(format!("unknown smoothness class `{other}`"))),
    }
}

fn to_box(bounds: Vec<(f64, f64)>) -> absrate::Result<BoxRegion> {
    BoxRegion::from_bounds(&bounds)
}

fn from_box(b: &BoxRegion) -> Vec<(f64, f64)> {
    b.axes().iter().map(|i| (i.lo(), i.hi())).collect()
}

/// A discrete-time system `x⁺ = f(x)` on a box domain.
#[pyclass(name = "System", frozen, module = "absrate_py")]
pub struct PySystem {
    inner: SystemDef,
}

#[pymethods]
impl PySystem {
    #[staticmethod]
    fn doubling() -> Self {
        Self { inner: SystemDef::doubling() }
    }

    #[staticmethod]
    fn square() -> Self {
        Self { inner: SystemDef::square() }
    }

    #[staticmethod]
    fn identity(n: usize) -> PyResult<Self> {
        SystemDef::from_spec(&SystemSpec::Identity { n, domain: None }).py_err().map(|inner| Self { inner })
    }

    #[staticmethod]
    fn lti(a: Vec<Vec<f64>>) -> PyResult<Self> {
        SystemDef::lti(a).py_err().map(|inner| Self { inner })
    }

    #[staticmethod]
    fn nonlinear3d() -> Self {
        Self { inner: SystemDef::nonlinear3d() }
    }

    /// System from expressions over `x1..xn`, e.g. `System.expr(["2*x1*(1-x1)"], [(0, 1)], "lipschitz", lipschitz=2)`.
    #[staticmethod]
    #[pyo3(signature = (f, domain, smoothness, pieces=None, lipschitz=None))]
    fn expr(
        f: Vec<String>,
        domain: Vec<(f64, f64)>,
        smoothness: &str,
        pieces: Option<u32>,
        lipschitz: Option<f64>,
    ) -> PyResult<Self> {
        let spec = SystemSpec::Expr {
            f,
            domain: to_box(domain).py_err()?,
            smoothness: parse_smoothness(smoothness, pieces).py_err()?,
            lipschitz,
        };
        SystemDef::from_spec(&spec).py_err().map(|inner| Self { inner })
    }

    /// System from the JSON form used in run configs.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: SystemSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        SystemDef::from_spec(&spec).py_err().map(|inner| Self { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(self.inner.spec()).expect("system spec serializes")
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn domain(&self) -> Vec<(f64, f64)> {
        from_box(self.inner.domain())
    }

    #[getter]
    fn lipschitz(&self) -> Option<f64> {
        self.inner.lipschitz()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn step(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.step(&x).py_err()
    }

    fn jacobian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let j = self.inner.jacobian(&x).py_err()?;
        Ok(j.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// The `l` states `x_0, …, x_{l−1}` starting from `x0`.
    fn behavior(&self, x0: Vec<f64>, l: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.behavior(&x0, l).py_err()?.states)
    }

    /// Enclosure of the image of a box, as a list of boxes.
    fn image(&self, cell: Vec<(f64, f64)>) -> PyResult<Vec<Vec<(f64, f64)>>> {
        let b = to_box(cell).py_err()?;
        Ok(self.inner.image(&b).py_err()?.iter().map(from_box).collect())
    }

    #[pyo3(signature = (samples=10_000, seed=0))]
    fn lipschitz_estimate(&self, samples: usize, seed: u64) -> PyResult<f64> {
        self.inner.lipschitz_estimate(McConfig::new(samples, seed)).py_err()
    }

    fn __repr__(&self) -> String {
        format!("System({})", self.inner.fingerprint())
    }
}

fn parse_mode(mode: &str) -> PyResult<TransitionMode> {
    match mode {
        "closure" => Ok(TransitionMode::Closure),
        "exact" => Ok(TransitionMode::Exact),
        other => Err(PyValueError::new_err(format!("unknown transition mode `{other}`"))),
    }
}

/// Uniform-grid abstraction with its transition relation.
#[pyclass(name = "Abstraction", frozen, module = "absrate_py")]
pub struct PyAbstraction {
    inner: UniformGridAbstraction,
}

#[pymethods]
impl PyAbstraction {
    #[new]
    #[pyo3(signature = (system, counts, mode="closure", cell_limit=absrate::abstraction::DEFAULT_CELL_LIMIT, workers=0))]
    fn new(system: &PySystem, counts: Vec<usize>, mode: &str, cell_limit: usize, workers: usize) -> PyResult<Self> {
        let opts = BuildOptions { mode: parse_mode(mode)?, cell_limit, workers };
        UniformGridAbstraction::build(&system.inner, counts, opts).py_err().map(|inner| Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        UniformGridAbstraction::from_json(text).py_err().map(|inner| Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn num_cells(&self) -> usize {
        self.inner.grid.num_cells()
    }

    #[getter]
    fn num_transitions(&self) -> usize {
        self.inner.transitions.num_transitions()
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.inner.grid.counts().to_vec()
    }

    fn cell(&self, index: usize) -> PyResult<Vec<(f64, f64)>> {
        if index >= self.inner.grid.num_cells() {
            return Err(PyValueError::new_err(format!("cell {index} out of range")));
        }
        Ok(from_box(&self.inner.grid.cell(index)))
    }

    fn encode(&self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.grid.encode(&x).py_err()
    }

    fn successors(&self, index: usize) -> PyResult<Vec<usize>> {
        if index >= self.inner.grid.num_cells() {
            return Err(PyValueError::new_err(format!("cell {index} out of range")));
        }
        Ok(self.inner.transitions.successors(index).to_vec())
    }

    fn transitions(&self) -> Vec<(usize, usize)> {
        self.inner.transitions.pairs()
    }

    /// `d(ξ, Ω_A)` for the trajectory of `system` from `x0` over `l` steps.
    fn distortion(&self, system: &PySystem, x0: Vec<f64>, l: usize) -> PyResult<f64> {
        self.inner.check_system(&system.inner).py_err()?;
        let traj = system.inner.behavior(&x0, l).py_err()?;
        self.inner.distortion(&traj).py_err()
    }

    /// Monte Carlo `(mean, stderr)` of the distortion over uniform initial states.
    #[pyo3(signature = (system, l, samples=10_000, seed=0, workers=0))]
    fn expected_distortion(
        &self,
        py: Python<'_>,
        system: &PySystem,
        l: usize,
        samples: usize,
        seed: u64,
        workers: usize,
    ) -> PyResult<(f64, f64)> {
        self.inner.check_system(&system.inner).py_err()?;
        let mc = McConfig::new(samples, seed).with_workers(workers);
        let est = py
            .detach(|| expected_distortion(&system.inner, &self.inner.grid, &self.inner.transitions, l, mc))
            .py_err()?;
        Ok((est.mean, est.stderr))
    }

    /// Number of sampled trajectories whose cell sequence leaves the relation.
    #[pyo3(signature = (system, l, samples=10_000, seed=0, workers=0))]
    fn check_inclusion(
        &self,
        py: Python<'_>,
        system: &PySystem,
        l: usize,
        samples: usize,
        seed: u64,
        workers: usize,
    ) -> PyResult<usize> {
        self.inner.check_system(&system.inner).py_err()?;
        let mc = McConfig::new(samples, seed).with_workers(workers);
        py.detach(|| check_inclusion(&system.inner, &self.inner.grid, &self.inner.transitions, l, mc)).py_err()
    }

    fn __repr__(&self) -> String {
        format!(
            "Abstraction({}, cells={}, transitions={})",
            self.inner.system,
            self.inner.grid.num_cells(),
            self.inner.transitions.num_transitions()
        )
    }
}

fn report_for(
    sys: &SystemDef,
    l: usize,
    orders: &[Order],
    samples: usize,
    seed: u64,
    method: &str,
) -> absrate::Result<EntropyReport> {
    let finite: Vec<f64> = orders.iter().filter(|s| !s.is_infinite()).map(|s| s.0).collect();
    let mc = McConfig::new(samples, seed);
    match method {
        "auto" => entropy_report(sys, l, &finite, mc),
        "closed_form" => entropy_closed_form(sys, l, &finite),
        "monte_carlo" => entropy_report_mc(sys, l, &finite, mc),
        other => Err(absrate::Error::InvalidParameter(format!("unknown entropy method `{other}`"))),
    }
}

/// Entropy report `{h0, h, stderr_h, renyi, h_inf, ...}` in nats.
#[pyfunction]
#[pyo3(signature = (system, l, orders=None, samples=10_000, seed=0, method="auto"))]
fn entropy<'py>(
    py: Python<'py>,
    system: &PySystem,
    l: usize,
    orders: Option<Vec<f64>>,
    samples: usize,
    seed: u64,
    method: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let orders = parse_orders(orders).py_err()?;
    let report = py.detach(|| report_for(&system.inner, l, &orders, samples, seed, method)).py_err()?;
    to_py(py, &report)
}

/// `(value, case)` of the c-constant.
#[pyfunction]
#[pyo3(signature = (system, l, mode="prop6", lipschitz=None))]
fn c_constant_of(system: &PySystem, l: usize, mode: &str, lipschitz: Option<f64>) -> PyResult<(f64, String)> {
    let c = c_constant(&system.inner, l, parse_c_mode(mode).py_err()?, lipschitz).py_err()?;
    Ok((c.value, c.case.tag().to_string()))
}

struct BoundSetup {
    inputs: BoundInputs,
    case: absrate::bounds::CCase,
}

#[allow(clippy::too_many_arguments)]
fn bound_setup(
    sys: &SystemDef,
    l: usize,
    orders: Option<Vec<f64>>,
    c_mode: &str,
    lipschitz: Option<f64>,
    samples: usize,
    seed: u64,
    method: &str,
) -> absrate::Result<BoundSetup> {
    let orders = parse_orders(orders)?;
    let report = report_for(sys, l, &orders, samples, seed, method)?;
    let c = c_constant(sys, l, parse_c_mode(c_mode)?, lipschitz)?;
    Ok(BoundSetup { inputs: BoundInputs::from_report(&report, sys.dim(), c.value, &orders)?, case: c.case })
}

/// Lower bound on the expected distortion of any abstraction with rate `r` nats.
#[pyfunction]
#[pyo3(signature = (system, l, r, orders=None, c_mode="prop6", lipschitz=None, samples=10_000, seed=0, method="auto"))]
#[allow(clippy::too_many_arguments)]
fn distortion_bound<'py>(
    py: Python<'py>,
    system: &PySystem,
    l: usize,
    r: f64,
    orders: Option<Vec<f64>>,
    c_mode: &str,
    lipschitz: Option<f64>,
    samples: usize,
    seed: u64,
    method: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let bound = py
        .detach(|| {
            let setup = bound_setup(&system.inner, l, orders, c_mode, lipschitz, samples, seed, method)?;
            distortion_lower_bound(r, &setup.inputs)
        })
        .py_err()?;
    to_py(py, &bound)
}

/// Minimum rate (nats) of any abstraction with expected distortion at most `d`.
#[pyfunction]
#[pyo3(signature = (system, l, d, orders=None, c_mode="prop6", lipschitz=None, samples=10_000, seed=0, method="auto"))]
#[allow(clippy::too_many_arguments)]
fn rate_bound<'py>(
    py: Python<'py>,
    system: &PySystem,
    l: usize,
    d: f64,
    orders: Option<Vec<f64>>,
    c_mode: &str,
    lipschitz: Option<f64>,
    samples: usize,
    seed: u64,
    method: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let bound = py
        .detach(|| {
            let setup = bound_setup(&system.inner, l, orders, c_mode, lipschitz, samples, seed, method)?;
            rate_lower_bound(d, &setup.inputs)
        })
        .py_err()?;
    to_py(py, &bound)
}

/// Bound rows over an increasing rate grid.
#[pyfunction]
#[pyo3(signature = (system, l, r_grid, orders=None, c_mode="prop6", lipschitz=None, samples=10_000, seed=0, method="auto"))]
#[allow(clippy::too_many_arguments)]
fn rd_curve_of<'py>(
    py: Python<'py>,
    system: &PySystem,
    l: usize,
    r_grid: Vec<f64>,
    orders: Option<Vec<f64>>,
    c_mode: &str,
    lipschitz: Option<f64>,
    samples: usize,
    seed: u64,
    method: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let rows = py
        .detach(|| {
            let setup = bound_setup(&system.inner, l, orders, c_mode, lipschitz, samples, seed, method)?;
            rd_curve(&setup.inputs, setup.case, &r_grid)
        })
        .py_err()?;
    to_py(py, &rows)
}

#[pyfunction]
fn doubling_optimal_distortion<'py>(py: Python<'py>, l: usize, k: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &experiments::doubling_optimal_distortion(l, k).py_err()?)
}

#[pyfunction]
#[pyo3(signature = (l, k, samples=10_000, seed=0))]
fn doubling_optimal_abstraction<'py>(
    py: Python<'py>,
    l: usize,
    k: usize,
    samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let res = py.detach(|| experiments::doubling_optimal_abstraction(l, k, McConfig::new(samples, seed))).py_err()?;
    to_py(py, &res)
}

#[pyfunction]
#[pyo3(signature = (l, ks, orders=None))]
fn doubling_ratio_check<'py>(
    py: Python<'py>,
    l: usize,
    ks: Vec<usize>,
    orders: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let orders = match orders {
        Some(o) => parse_orders(Some(o)).py_err()?,
        None => vec![Order::INFINITY],
    };
    to_py(py, &experiments::doubling_ratio_check(l, &ks, &orders).py_err()?)
}

/// The 3-D benchmark; `config` is a JSON object string with the experiment fields.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn nonlinear3d_experiment<'py>(py: Python<'py>, config: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: Nonlinear3dConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => Nonlinear3dConfig::default(),
    };
    let res = py.detach(|| experiments::nonlinear3d_experiment(&cfg, |_| {})).py_err()?;
    to_py(py, &res)
}

#[pymodule]
fn absrate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AbsrateError", m.py().get_type::<AbsrateError>())?;
    m.add_class::<PySystem>()?;
    m.add_class::<PyAbstraction>()?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(c_constant_of, m)?)?;
    m.add_function(wrap_pyfunction!(distortion_bound, m)?)?;
    m.add_function(wrap_pyfunction!(rate_bound, m)?)?;
    m.add_function(wrap_pyfunction!(rd_curve_of, m)?)?;
    m.add_function(wrap_pyfunction!(doubling_optimal_distortion, m)?)?;
    m.add_function(wrap_pyfunction!(doubling_optimal_abstraction, m)?)?;
    m.add_function(wrap_pyfunction!(doubling_ratio_check, m)?)?;
    m.add_function(wrap_pyfunction!(nonlinear3d_experiment, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_default_and_validate() {
        assert_eq!(parse_orders(None).unwrap().len(), 8);
        assert!(parse_orders(Some(vec![f64::INFINITY, 2.0])).unwrap()[0].is_infinite());
        assert!(parse_orders(Some(vec![1.0])).is_err());
    }

    #[test]
    fn option_strings() {
        assert_eq!(parse_c_mode("high_rate").unwrap(), CMode::HighRate);
        assert!(parse_c_mode("tight").is_err());
        assert_eq!(parse_smoothness("piecewise_affine", Some(2)).unwrap(), Smoothness::PiecewiseAffine { pieces: 2 });
        assert!(parse_smoothness("piecewise_affine", None).is_err());
        assert!(parse_smoothness("smooth", None).is_err());
    }
}
