//! Python bindings: the verification cases and the design sweep driven by the
//! same JSON configs as the command line, plus direct access to POD bases.

use std::collections::HashMap;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use wallpod::cases::{self, RunConfig};
use wallpod::pod::{extract_time_basis, SnapshotSet};
use wallpod::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else if matches!(e, Error::Io(_)) {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Parses `config` (the preset of `case` when `None`) and checks it names `case`.
fn load(case: &str, config: Option<&str>) -> PyResult<RunConfig> {
    let text = config.map_or_else(|| format!(r#"{{"case": "{case}"}}"#), str::to_owned);
    let cfg = RunConfig::from_json(&text).map_err(to_py)?;
    if cfg.case() != case {
        return Err(PyValueError::new_err(format!("expected a `{case}` config, got `{}`", cfg.case())));
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn metrics(rows: Vec<(String, f64)>) -> HashMap<String, f64> {
    rows.into_iter().collect()
}

/// Default config of a case (`mono`, `multilayer`, `param` or `design`) as JSON.
#[pyfunction]
fn preset(case: &str) -> PyResult<String> {
    load(case, None)?.to_json().map_err(to_py)
}

/// Mono-layer verification; returns the metric table as a dict.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn verify_mono(py: Python<'_>, config: Option<&str>) -> PyResult<HashMap<String, f64>> {
    let RunConfig::Mono(c) = load("mono", config)? else { unreachable!() };
    let report = py.detach(|| cases::verify_mono(&c)).map_err(to_py)?;
    Ok(metrics(report.metrics()))
}

/// Two-layer verification against the series solution.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn verify_multilayer(py: Python<'_>, config: Option<&str>) -> PyResult<HashMap<String, f64>> {
    let RunConfig::Multilayer(c) = load("multilayer", config)? else { unreachable!() };
    let report = py.detach(|| cases::verify_multilayer(&c)).map_err(to_py)?;
    Ok(metrics(report.metrics()))
}

/// Parametric verification with interpolated bases.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn verify_param(py: Python<'_>, config: Option<&str>) -> PyResult<HashMap<String, f64>> {
    let RunConfig::Param(c) = load("param", config)? else { unreachable!() };
    let report = py
        .detach(|| {
            let (archive, cost) = cases::build_param_archive(&c)?;
            cases::verify_param(&c, &archive, cost)
        })
        .map_err(to_py)?;
    Ok(metrics(report.metrics()))
}

/// Design sweep. Returns the metrics and, per sampled point, its parameters
/// and consumed work in MJ/m2/yr.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn design(py: Python<'_>, config: Option<&str>) -> PyResult<(HashMap<String, f64>, Vec<(Vec<f64>, f64)>)> {
    let RunConfig::Design(c) = load("design", config)? else { unreachable!() };
    let report = py.detach(|| cases::design(&c)).map_err(to_py)?;
    let points = report.points.iter().map(|d| (d.p.clone(), d.work)).collect();
    Ok((metrics(report.metrics()), points))
}

/// Time basis of one layer from snapshots given as rows of nodes by columns
/// of times, spaced `dtau`. Returns `order` columns as a list of lists
/// (times by modes) and all correlation eigenvalues.
#[pyfunction]
fn time_basis(snapshots: Vec<Vec<f64>>, dtau: f64, order: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let nx = snapshots.len();
    let nt = snapshots.first().map_or(0, Vec::len);
    if snapshots.iter().any(|r| r.len() != nt) {
        return Err(PyValueError::new_err("snapshot rows differ in length"));
    }
    let u = DMatrix::from_fn(nx, nt, |j, k| snapshots[j][k]);
    let set = SnapshotSet::new(dtau, vec![u]).map_err(to_py)?;
    let basis = extract_time_basis(&set, &[order]).map_err(to_py)?;
    let layer = &basis.layers[0];
    let psi = (0..layer.psi.nrows()).map(|k| layer.psi.row(k).iter().copied().collect()).collect();
    Ok((psi, layer.eigenvalues.clone()))
}

#[pymodule(name = "wallpod")]
pub fn wallpod_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(verify_mono, m)?)?;
    m.add_function(wrap_pyfunction!(verify_multilayer, m)?)?;
    m.add_function(wrap_pyfunction!(verify_param, m)?)?;
    m.add_function(wrap_pyfunction!(design, m)?)?;
    m.add_function(wrap_pyfunction!(time_basis, m)?)?;
    Ok(())
}
