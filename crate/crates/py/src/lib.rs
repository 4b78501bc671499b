//! Python bindings. Structured values cross the boundary as JSON strings so
//! the Python side can load them with `json.loads`.

use std::path::Path;
use std::sync::Mutex;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vapitest::forge::{forge, ForgeOptions, Profile};
use vapitest::ingest::{extract_test_objects, parse_spec, Format, TestObjectSet};
use vapitest::matching::{MatchOutcome, Strictness};
use vapitest::report::{emit_report, exit_code, ReportFormat};
use vapitest::rig::{start_rig, FaultSpec, RigConfig, RigHandle};
use vapitest::tables::{parse_can_table, parse_vv_table};
use vapitest::testgen::GenConfig;
use vapitest::units::{convert, Quantity, UnitRegistry};
use vapitest::workflow::{self, BackendConfig, RunConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(runtime_err)
}

/// Test object sets extracted from a spec document.
#[pyfunction]
#[pyo3(signature = (document, format = "yaml"))]
fn extract(document: &str, format: &str) -> PyResult<String> {
    let format: Format = format.parse().map_err(value_err)?;
    let spec = parse_spec(document, format).map_err(value_err)?;
    to_json(&extract_test_objects(&spec))
}

/// Map extracted test objects onto the CAN and VV tables with the rule matcher.
#[pyfunction]
#[pyo3(signature = (objects, can_table, vv_table, strictness = "moderate"))]
fn match_objects(objects: &str, can_table: &str, vv_table: &str, strictness: &str) -> PyResult<String> {
    let sets: Vec<TestObjectSet> = serde_json::from_str(objects).map_err(value_err)?;
    let can = parse_can_table(can_table).map_err(value_err)?;
    let vv = parse_vv_table(vv_table).map_err(value_err)?;
    let strictness: Strictness = strictness.parse().map_err(value_err)?;
    let cfg = BackendConfig::default();
    let backend = workflow::make_backend(&cfg).map_err(runtime_err)?;
    let outcome = workflow::match_stage(&sets, &can, &vv, strictness, backend.as_ref(), cfg.parallelism);
    to_json(&outcome)
}

/// Returns `(cases_json, plan_text)`.
#[pyfunction]
#[pyo3(signature = (matches, ranges = None))]
fn generate(matches: &str, ranges: Option<&str>) -> PyResult<(String, String)> {
    let outcome: MatchOutcome = serde_json::from_str(matches).map_err(value_err)?;
    let config: GenConfig = match ranges {
        Some(r) => serde_json::from_str(r).map_err(value_err)?,
        None => GenConfig::default(),
    };
    let (cases, plan) = workflow::gen_stage(&outcome, &config);
    Ok((to_json(&cases)?, plan))
}

#[pyfunction]
fn convert_unit(value: f64, from_unit: &str, to_unit: &str) -> PyResult<f64> {
    let reg = UnitRegistry::bundled();
    let from = reg.parse_unit(from_unit).map_err(value_err)?;
    let to = reg.parse_unit(to_unit).map_err(value_err)?;
    Ok(convert(&Quantity::new(value, from), &to).map_err(value_err)?.magnitude)
}

/// Write a synthetic corpus to `out_dir` and return its manifest as JSON.
#[pyfunction]
#[pyo3(signature = (out_dir, profile = "clean", size = 10, seed = 0, faults = 0))]
fn forge_corpus(out_dir: &str, profile: &str, size: usize, seed: u64, faults: usize) -> PyResult<String> {
    let profile: Profile = profile.parse().map_err(value_err)?;
    let corpus = forge(&ForgeOptions { seed, profile, size, faults }).map_err(value_err)?;
    corpus.write_to(Path::new(out_dir)).map_err(runtime_err)?;
    to_json(&corpus.manifest)
}

/// Run every stage against an auto-started rig. Returns `(exit_code, report_json)`.
#[pyfunction]
#[pyo3(signature = (spec, can_table, vv_table, out, strictness = "moderate"))]
fn run_e2e(spec: &str, can_table: &str, vv_table: &str, out: &str, strictness: &str) -> PyResult<(i32, String)> {
    let mut cfg = RunConfig::new(Path::new(spec), Path::new(can_table), Path::new(vv_table), Path::new(out));
    cfg.strictness = strictness.parse().map_err(value_err)?;
    let report = workflow::run_e2e(&cfg).map_err(runtime_err)?;
    Ok((exit_code(&report), emit_report(&report, ReportFormat::Record)))
}

/// A simulated rig served on a loopback port for as long as the object lives
/// or until `stop()`.
#[pyclass]
struct Rig {
    handle: Mutex<Option<RigHandle>>,
    url: String,
}

impl Rig {
    fn with<T>(&self, f: impl FnOnce(&RigHandle) -> PyResult<T>) -> PyResult<T> {
        let guard = self.handle.lock().map_err(runtime_err)?;
        match guard.as_ref() {
            Some(h) => f(h),
            None => Err(PyRuntimeError::new_err("rig is stopped")),
        }
    }
}

#[pymethods]
impl Rig {
    #[new]
    #[pyo3(signature = (config, port = 0))]
    fn new(config: &str, port: u16) -> PyResult<Rig> {
        let cfg: RigConfig = serde_json::from_str(config).map_err(value_err)?;
        cfg.validate().map_err(value_err)?;
        let handle = start_rig(cfg, port).map_err(runtime_err)?;
        let url = handle.url();
        Ok(Rig { handle: Mutex::new(Some(handle)), url })
    }

    #[getter]
    fn url(&self) -> String {
        self.url.clone()
    }

    fn vv_get(&self, key: &str) -> PyResult<f64> {
        self.with(|h| h.rig.vv_get(key).map_err(value_err))
    }

    fn vv_set(&self, key: &str, raw: f64) -> PyResult<()> {
        self.with(|h| h.rig.vv_set(key, raw).map_err(value_err))
    }

    /// Fault as JSON, e.g. `{"kind": "dead_signal", "can_key": "..."}`.
    fn inject_fault(&self, fault: &str) -> PyResult<()> {
        let fault: FaultSpec = serde_json::from_str(fault).map_err(value_err)?;
        self.with(|h| h.rig.inject_fault(fault).map_err(value_err))
    }

    fn clear_faults(&self) -> PyResult<()> {
        self.with(|h| {
            h.rig.clear_faults();
            Ok(())
        })
    }

    fn can_trace(&self) -> PyResult<String> {
        self.with(|h| to_json(&h.rig.can_trace()))
    }

    fn stop(&self) -> PyResult<()> {
        let handle = self.handle.lock().map_err(runtime_err)?.take();
        drop(handle);
        Ok(())
    }
}

#[pymodule]
fn vapitest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(match_objects, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(convert_unit, m)?)?;
    m.add_function(wrap_pyfunction!(forge_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_e2e, m)?)?;
    m.add_class::<Rig>()?;
    Ok(())
}
