//! Python bindings: experiment commands driven by a config plus overrides,
//! and a few standalone utilities.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString};

use cbr_subg::eval::strict_hit as strict_hit_impl;
use cbr_subg::harness::{
    cmd_ablate_distance, cmd_baseline, cmd_collect, cmd_eval, cmd_gen_data, cmd_stats, cmd_sweep_knn, cmd_train, Baseline,
    ExperimentConfig,
};
use cbr_subg::retrieval::{Case, CaseBase};
use cbr_subg::{Error, Split};

fn to_py(e: Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// A Python value as a TOML literal.
fn toml_literal(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = v.cast::<PyString>() {
        return Ok(toml::Value::String(s.to_str()?.to_string()).to_string());
    }
    if let Ok(b) = v.cast::<PyBool>() {
        return Ok(b.is_true().to_string());
    }
    if v.is_instance_of::<PyInt>() {
        return Ok(v.extract::<i64>()?.to_string());
    }
    if v.is_instance_of::<PyFloat>() {
        return Ok(toml::Value::Float(v.extract::<f64>()?).to_string());
    }
    if let Ok(list) = v.cast::<PyList>() {
        let items = list.iter().map(|x| toml_literal(&x)).collect::<PyResult<Vec<_>>>()?;
        return Ok(format!("[{}]", items.join(", ")));
    }
    if let Ok(p) = v.extract::<PathBuf>() {
        return Ok(toml::Value::String(p.display().to_string()).to_string());
    }
    Err(PyValueError::new_err(format!("unsupported override value {v}")))
}

fn load_config(config: Option<PathBuf>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<ExperimentConfig> {
    let mut pairs = Vec::new();
    if let Some(d) = overrides {
        for (k, v) in d.iter() {
            pairs.push((k.extract::<String>()?, toml_literal(&v)?));
        }
    }
    ExperimentConfig::load(config.as_deref(), &pairs).map_err(to_py)
}

/// The resolved configuration as TOML.
#[pyfunction]
#[pyo3(signature = (config=None, overrides=None))]
fn show_config(config: Option<PathBuf>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    load_config(config, overrides)?.to_toml().map_err(to_py)
}

/// Generates the synthetic benchmark and returns the manifest sha256.
#[pyfunction]
#[pyo3(signature = (config=None, overrides=None))]
fn gen_data(py: Python<'_>, config: Option<PathBuf>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let cfg = load_config(config, overrides)?;
    py.detach(|| cmd_gen_data(&cfg)).map(|(_, hash)| hash).map_err(to_py)
}

/// Runs one command and returns its report as JSON text. Commands are
/// those of the CLI, with `baseline-cbr-path` and `baseline-gnn-transe`
/// for the comparison systems.
#[pyfunction]
#[pyo3(signature = (command, config=None, overrides=None))]
fn run(py: Python<'_>, command: &str, config: Option<PathBuf>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let cfg = load_config(config, overrides)?;
    let f = match command {
        "train" => cmd_train,
        "eval" => cmd_eval,
        "sweep-knn" => cmd_sweep_knn,
        "ablate-distance" => cmd_ablate_distance,
        "collect" => cmd_collect,
        "stats" => cmd_stats,
        "baseline-cbr-path" => |c: &ExperimentConfig| cmd_baseline(c, Baseline::CbrPath),
        "baseline-gnn-transe" => |c: &ExperimentConfig| cmd_baseline(c, Baseline::GnnTranse),
        other => return Err(PyValueError::new_err(format!("unknown command '{other}'"))),
    };
    let report = py.detach(|| f(&cfg)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Whether every gold index scores strictly above every other index.
#[pyfunction]
fn strict_hit(scores: Vec<f64>, gold: Vec<usize>) -> PyResult<bool> {
    if let Some(&g) = gold.iter().find(|&&g| g >= scores.len()) {
        return Err(PyValueError::new_err(format!("gold index {g} out of range")));
    }
    Ok(strict_hit_impl(&scores, &gold, true))
}

/// The `k` rows of `embeddings` most cosine-similar to `query`, as
/// `(row, similarity)` pairs, best first.
#[pyfunction]
fn knn(embeddings: Vec<Vec<f64>>, query: Vec<f64>, k: usize) -> PyResult<Vec<(u64, f64)>> {
    let case = |id: u64, v: Vec<f64>| Case {
        case_id: id,
        query_text: None,
        query_entities: vec![],
        answers: vec![],
        embedding: Some(v),
        pattern_type_id: None,
        split: Split::Train,
    };
    let cases = embeddings.into_iter().enumerate().map(|(i, v)| case(i as u64, v)).collect();
    let base = CaseBase::normalize_and_index(cases).map_err(to_py)?;
    base.knn(&case(u64::MAX, query), k).map_err(to_py)
}

#[pymodule]
fn cbr_subg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(show_config, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(strict_hit, m)?)?;
    m.add_function(wrap_pyfunction!(knn, m)?)?;
    Ok(())
}
