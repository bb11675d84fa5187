//! Python bindings: graph spectra, reference dispatch solvers, the
//! finite-step averaging filters, settling bounds, and a JSON-driven
//! scenario runner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use fxt_dispatch::discrete::FacaPlan;
use fxt_dispatch::dynamics::Gains;
use fxt_dispatch::graph::{Topology, TopologySchedule};
use fxt_dispatch::model::GeneratorParams;
use fxt_dispatch::oracle::DispatchSolution;

fn map_err(e: fxt_dispatch::Error) -> PyErr {
    match e {
        fxt_dispatch::Error::NotConverged { .. } | fxt_dispatch::Error::MaxIterations { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn topology(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Topology> {
    Topology::from_edges(n, &edges).map_err(map_err)
}

fn generator_params(
    alpha: Vec<f64>,
    beta: Vec<f64>,
    p_min: Option<Vec<f64>>,
    p_max: Option<Vec<Option<f64>>>,
) -> PyResult<Vec<GeneratorParams>> {
    if alpha.len() != beta.len() {
        return Err(PyValueError::new_err("alpha and beta lengths differ"));
    }
    let n = alpha.len();
    let p_min = p_min.unwrap_or_else(|| vec![0.0; n]);
    let p_max = p_max.unwrap_or_else(|| vec![None; n]);
    if p_min.len() != n || p_max.len() != n {
        return Err(PyValueError::new_err("limit vector lengths differ"));
    }
    Ok((0..n)
        .map(|i| GeneratorParams::new(alpha[i], beta[i], 0.0, p_min[i], p_max[i]))
        .collect())
}

fn solution_dict<'py>(py: Python<'py>, sol: &DispatchSolution) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("lambda_star", sol.lambda_star)?;
    d.set_item("p_star", PyList::new(py, &sol.p_star)?)?;
    d.set_item(
        "saturated",
        PyList::new(py, sol.saturated.iter().copied().collect::<Vec<_>>())?,
    )?;
    d.set_item(
        "at_max",
        PyList::new(py, sol.at_max.iter().copied().collect::<Vec<_>>())?,
    )?;
    Ok(d)
}

/// Graph Laplacian of an undirected 0/1 topology.
#[pyfunction]
fn laplacian(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Vec<Vec<f64>>> {
    Ok(fxt_dispatch::graph::laplacian(&topology(n, edges)?))
}

/// Eigenvalues, deduplicated positive eigenvalues, and the algebraic
/// connectivity of the topology's Laplacian.
#[pyfunction]
fn spectrum<'py>(py: Python<'py>, n: usize, edges: Vec<(usize, usize)>) -> PyResult<Bound<'py, PyDict>> {
    let topo = topology(n, edges)?;
    let spec = fxt_dispatch::graph::spectrum(&fxt_dispatch::graph::laplacian(&topo))
        .map_err(map_err)?;
    let d = PyDict::new(py);
    d.set_item("eigenvalues", PyList::new(py, &spec.eigenvalues)?)?;
    d.set_item("distinct_nonzero", PyList::new(py, &spec.distinct_nonzero)?)?;
    d.set_item("lambda2", spec.lambda2)?;
    Ok(d)
}

#[pyfunction]
fn is_connected(n: usize, edges: Vec<(usize, usize)>) -> PyResult<bool> {
    Ok(fxt_dispatch::graph::is_connected(&topology(n, edges)?))
}

/// Signed power |x|^mu * sign(x).
#[pyfunction]
fn sgn_mu(x: f64, mu: f64) -> f64 {
    fxt_dispatch::dynamics::sgn_mu(x, mu)
}

/// One semi-implicit contraction step z/(1 + h|z|).
#[pyfunction]
fn z_step(z: f64, h: f64) -> f64 {
    fxt_dispatch::discrete::z_step(z, h)
}

/// Finite-step exact averaging over a connected topology.
#[pyfunction]
fn faca_consensus(n: usize, edges: Vec<(usize, usize)>, values: Vec<f64>) -> PyResult<Vec<f64>> {
    let topo = topology(n, edges)?;
    if values.len() != n {
        return Err(PyValueError::new_err("values length must equal n"));
    }
    let plan = FacaPlan::for_topology(&topo).map_err(map_err)?;
    Ok(fxt_dispatch::discrete::faca_consensus(&values, &topo, &plan))
}

/// Closed-form dispatch ignoring capacity limits.
#[pyfunction]
fn unconstrained_optimum<'py>(
    py: Python<'py>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    p_tot: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let params = generator_params(alpha, beta, None, None)?;
    let sol = fxt_dispatch::oracle::unconstrained_optimum(&params, p_tot);
    solution_dict(py, &sol)
}

/// Capacity-constrained dispatch (unique KKT point). `p_max` entries may be
/// None for unbounded generators.
#[pyfunction]
#[pyo3(signature = (alpha, beta, p_tot, p_min=None, p_max=None))]
fn constrained_optimum<'py>(
    py: Python<'py>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    p_tot: f64,
    p_min: Option<Vec<f64>>,
    p_max: Option<Vec<Option<f64>>>,
) -> PyResult<Bound<'py, PyDict>> {
    let params = generator_params(alpha, beta, p_min, p_max)?;
    let sol = fxt_dispatch::oracle::constrained_optimum(&params, p_tot).map_err(map_err)?;
    solution_dict(py, &sol)
}

/// Settling-time bounds and the minimum disturbance-rejecting gain for a
/// static topology.
#[pyfunction]
#[pyo3(signature = (alpha, n, edges, p=1.0, mu1=0.8, mu2=1.2, nu1=0.8, nu2=1.2, delta=0.0))]
#[allow(clippy::too_many_arguments)]
fn settling_bounds<'py>(
    py: Python<'py>,
    alpha: Vec<f64>,
    n: usize,
    edges: Vec<(usize, usize)>,
    p: f64,
    mu1: f64,
    mu2: f64,
    nu1: f64,
    nu2: f64,
    delta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let params: Vec<GeneratorParams> = alpha
        .into_iter()
        .map(|a| GeneratorParams::unconstrained(a, 1.0, 0.0))
        .collect();
    let schedule = TopologySchedule::static_topology(topology(n, edges)?).map_err(map_err)?;
    let gains = Gains {
        p,
        mu1,
        mu2,
        nu1,
        nu2,
        ..Gains::default()
    };
    let b = fxt_dispatch::dynamics::settling_bounds(&params, &schedule, &gains, delta)
        .map_err(map_err)?;
    let d = PyDict::new(py);
    d.set_item("t1", b.t1)?;
    d.set_item("t2", b.t2)?;
    d.set_item("c1", b.c1)?;
    d.set_item("c2", b.c2)?;
    d.set_item("p_min_gain", b.p_min_gain)?;
    d.set_item("lambda2", b.lambda2)?;
    Ok(d)
}

/// Runs a scenario given as JSON text (same schema as the CLI's scenario
/// files) and returns the run summaries as a JSON string.
#[pyfunction]
fn run_scenario_json(py: Python<'_>, scenario_json: String) -> PyResult<String> {
    py.detach(|| {
        let scenario =
            fxt_dispatch::scenario::Scenario::from_json(&scenario_json, "<python>")
                .map_err(map_err)?;
        let resolved = scenario.resolve(None).map_err(map_err)?;
        let outcomes = resolved.run().map_err(map_err)?;
        let summaries: Vec<_> = outcomes.into_iter().map(|o| o.summary).collect();
        serde_json::to_string(&summaries).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    })
}

/// Canned case-study scenario ("iv-a", "iv-b", "iv-c") as JSON text.
#[pyfunction]
fn canned_scenario_json(name: &str) -> PyResult<String> {
    fxt_dispatch::scenario::canned(name)
        .map(|s| s.to_json())
        .ok_or_else(|| PyValueError::new_err(format!("unknown study '{name}'")))
}

#[pymodule]
fn fxt_dispatch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(laplacian, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(is_connected, m)?)?;
    m.add_function(wrap_pyfunction!(sgn_mu, m)?)?;
    m.add_function(wrap_pyfunction!(z_step, m)?)?;
    m.add_function(wrap_pyfunction!(faca_consensus, m)?)?;
    m.add_function(wrap_pyfunction!(unconstrained_optimum, m)?)?;
    m.add_function(wrap_pyfunction!(constrained_optimum, m)?)?;
    m.add_function(wrap_pyfunction!(settling_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario_json, m)?)?;
    m.add_function(wrap_pyfunction!(canned_scenario_json, m)?)?;
    Ok(())
}
