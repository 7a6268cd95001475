//! Python bindings: run scenarios, explore schedules and check traces from
//! Python, returning JSON-friendly dictionaries.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use mangrove_core::harness::checks::PropertyId;
use mangrove_core::harness::explore;
use mangrove_core::harness::runner;
use mangrove_core::harness::scenario::Scenario;
use mangrove_core::harness::suite;
use mangrove_core::model::{derive_quorums, SystemParams};
use mangrove_core::sim::trace::{RunOutcome, Trace};

fn parse_scenario(text: &str) -> PyResult<Scenario> {
    if let Some(bundled) = suite::bundled(text) {
        return Scenario::from_toml_str(bundled).map_err(|e| PyValueError::new_err(e.to_string()));
    }
    Scenario::from_toml_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn result_dict<'py>(
    py: Python<'py>,
    result: &runner::RunResult,
    include_trace: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item(
        "outcome",
        match result.outcome {
            RunOutcome::Quiescent => "quiescent",
            RunOutcome::HorizonExhausted => "horizon_exhausted",
        },
    )?;
    d.set_item("ok", result.report.all_pass())?;
    let checks = PyList::empty_bound(py);
    for r in &result.report.results {
        let item = PyDict::new_bound(py);
        item.set_item("prop", &r.prop)?;
        item.set_item("pass", r.pass)?;
        item.set_item("detail", &r.detail)?;
        checks.append(item)?;
    }
    d.set_item("checks", checks)?;
    let metrics = serde_json::to_string(&result.metrics)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    d.set_item("metrics_json", metrics)?;
    d.set_item("events", result.trace.events.len())?;
    if include_trace {
        d.set_item("trace_jsonl", result.trace.to_jsonl())?;
    }
    Ok(d)
}

/// Run a scenario (TOML text or a bundled scenario name) under a seed.
#[pyfunction]
#[pyo3(signature = (scenario, seed = 0, include_trace = false))]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario: &str,
    seed: u64,
    include_trace: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let scenario = parse_scenario(scenario)?;
    let result =
        runner::run_scenario(&scenario, seed).map_err(|e| PyValueError::new_err(e.to_string()))?;
    result_dict(py, &result, include_trace)
}

/// Replay a recorded adversary schedule against a scenario.
#[pyfunction]
#[pyo3(signature = (scenario, schedule, include_trace = false))]
fn run_schedule<'py>(
    py: Python<'py>,
    scenario: &str,
    schedule: Vec<usize>,
    include_trace: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let scenario = parse_scenario(scenario)?;
    let result = runner::run_scheduled(&scenario, &schedule)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    result_dict(py, &result, include_trace)
}

/// Exhaustively enumerate adversary schedules of a tiny scenario.
#[pyfunction]
#[pyo3(signature = (scenario, depth = None))]
fn explore_scenario<'py>(
    py: Python<'py>,
    scenario: &str,
    depth: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let scenario = parse_scenario(scenario)?;
    let report =
        explore::explore(&scenario, depth).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let d = PyDict::new_bound(py);
    d.set_item("ok", report.ok())?;
    d.set_item("schedules", report.schedules)?;
    d.set_item("depth", report.depth)?;
    d.set_item("complete", matches!(report.coverage, explore::Coverage::Complete))?;
    let violations = PyList::empty_bound(py);
    for v in &report.violations {
        let item = PyDict::new_bound(py);
        item.set_item("violated", &v.violated)?;
        item.set_item("detail", &v.detail)?;
        item.set_item("schedule", v.schedule.clone())?;
        violations.append(item)?;
    }
    d.set_item("violations", violations)?;
    Ok(d)
}

/// Check named properties against a stored trace (JSON lines).
#[pyfunction]
fn check_trace<'py>(
    py: Python<'py>,
    trace_jsonl: &str,
    props: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let trace =
        Trace::from_jsonl(trace_jsonl).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let mut parsed = Vec::new();
    for name in props {
        parsed.push(
            PropertyId::parse(&name)
                .ok_or_else(|| PyValueError::new_err(format!("unknown property {name}")))?,
        );
    }
    let report = runner::check_trace(&trace, &parsed);
    let d = PyDict::new_bound(py);
    d.set_item("ok", report.all_pass())?;
    let checks = PyList::empty_bound(py);
    for r in &report.results {
        let item = PyDict::new_bound(py);
        item.set_item("prop", &r.prop)?;
        item.set_item("pass", r.pass)?;
        item.set_item("detail", &r.detail)?;
        checks.append(item)?;
    }
    d.set_item("checks", checks)?;
    Ok(d)
}

/// Vote-count thresholds for a validator configuration.
#[pyfunction]
#[pyo3(signature = (n, f, p, delta = 100, gst = 0))]
fn quorums<'py>(
    py: Python<'py>,
    n: u32,
    f: u32,
    p: u32,
    delta: u64,
    gst: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let params = SystemParams { n, f, p, delta_bound: delta, gst };
    let q = derive_quorums(&params).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let d = PyDict::new_bound(py);
    d.set_item("fast", q.fast)?;
    d.set_item("slow_trigger", q.slow_trigger)?;
    d.set_item("fallback", q.fallback)?;
    d.set_item("qc_carry", q.qc_carry)?;
    d.set_item("round_votes", q.round_votes)?;
    Ok(d)
}

/// Names of the scenarios compiled into the library.
#[pyfunction]
fn bundled_scenarios() -> Vec<String> {
    suite::bundled_scenarios().into_iter().map(|(n, _)| n.to_string()).collect()
}

/// The acceptance suite; returns one dict per criterion.
#[pyfunction]
#[pyo3(signature = (quick = true))]
fn acceptance<'py>(py: Python<'py>, quick: bool) -> PyResult<Bound<'py, PyList>> {
    let list = PyList::empty_bound(py);
    for c in suite::run_acceptance(quick) {
        let item = PyDict::new_bound(py);
        item.set_item("id", c.id)?;
        item.set_item("name", c.name)?;
        item.set_item("pass", c.pass)?;
        item.set_item("detail", &c.detail)?;
        item.set_item("elapsed_ms", c.elapsed_ms as u64)?;
        list.append(item)?;
    }
    Ok(list)
}

#[pymodule]
fn mangrove_sim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(explore_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(check_trace, m)?)?;
    m.add_function(wrap_pyfunction!(quorums, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(acceptance, m)?)?;
    Ok(())
}
