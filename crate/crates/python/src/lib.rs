//! Python bindings. Inputs are passed as JSON documents (the same formats
//! the CLI reads from files); results come back as plain dicts and lists.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::{json, Value};

use comap_core::arch::{bundled_templates, TemplateLibrary};
use comap_core::costmodel::CostCoefficients;
use comap_core::engine::{self, Mode, RunConfig, RunInputs};
use comap_core::layermapper::CatalogOptions;
use comap_core::nsga2::{ConvergenceConfig, DensityRule};
use comap_core::scheduler::{decode, Operator};
use comap_core::sysmodel::NopConfig;
use comap_core::workload::parse_application_model;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (v.to_string(),))?.unbind())
}

fn load_inputs(
    workload: &str,
    templates: Option<&str>,
    coeffs: Option<&str>,
    nop: Option<&str>,
    fixed_hardware: Option<&str>,
) -> PyResult<RunInputs> {
    let am = parse_application_model(workload).map_err(value_err)?;
    let templates = match templates {
        Some(doc) => TemplateLibrary::parse(doc).map_err(value_err)?,
        None => bundled_templates(),
    };
    let coeffs = match coeffs {
        Some(doc) => CostCoefficients::parse(doc).map_err(value_err)?,
        None => CostCoefficients::default(),
    };
    let nop = match nop {
        Some(doc) => NopConfig::parse(doc).map_err(value_err)?,
        None => NopConfig::default(),
    };
    let fixed_hardware = fixed_hardware
        .map(|doc| engine::parse_fixed_hardware(doc, &templates))
        .transpose()
        .map_err(value_err)?;
    Ok(RunInputs {
        am,
        templates,
        coeffs,
        nop,
        catalog: None,
        cost_table: None,
        fixed_hardware,
    })
}

/// Runs the search. Returns `{"front": [...], "generations": n, "files": [...]}`;
/// report files are written only when `out_dir` is given.
#[pyfunction]
#[pyo3(signature = (
    workload, *, mode = "co_opt", seed = 0, generations = 300, population = 250,
    max_instances = 16, budget = 20_000, max_front = None, ablate = None,
    density_threshold = None, density_window = 5, templates = None, coeffs = None,
    nop = None, fixed_hardware = None, hardware_template = None, probabilities = None,
    out_dir = None,
))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    workload: &str,
    mode: &str,
    seed: u64,
    generations: usize,
    population: usize,
    max_instances: usize,
    budget: usize,
    max_front: Option<usize>,
    ablate: Option<&str>,
    density_threshold: Option<f64>,
    density_window: usize,
    templates: Option<&str>,
    coeffs: Option<&str>,
    nop: Option<&str>,
    fixed_hardware: Option<&str>,
    hardware_template: Option<String>,
    probabilities: Option<std::collections::HashMap<String, f64>>,
    out_dir: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let mode = Mode::from_name(mode).ok_or_else(|| value_err(format!("unknown mode `{mode}`")))?;
    let ablated_operator = ablate
        .map(|s| Operator::from_name(s).ok_or_else(|| value_err(format!("unknown operator `{s}`"))))
        .transpose()?;
    let mut cfg = RunConfig {
        mode,
        seed,
        population,
        convergence: ConvergenceConfig {
            max_generations: generations,
            density: density_threshold.map(|threshold| DensityRule {
                threshold,
                window: density_window,
            }),
        },
        max_instances,
        catalog: CatalogOptions { budget, max_front },
        ablated_operator,
        hardware_template,
        ..RunConfig::default()
    };
    for (name, p) in probabilities.unwrap_or_default() {
        let op = Operator::from_name(&name).ok_or_else(|| value_err(format!("unknown operator `{name}`")))?;
        cfg.probabilities.set(op, p);
    }
    let inputs = load_inputs(workload, templates, coeffs, nop, fixed_hardware)?;
    let artifacts = py
        .detach(|| engine::run_search(&inputs, &cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let files: Vec<String> = match out_dir {
        Some(dir) => engine::emit_reports(&artifacts, Path::new(dir))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        None => Vec::new(),
    };
    let p = &artifacts.problem;
    let front: Vec<Value> = artifacts
        .front
        .iter()
        .map(|m| {
            let sys = decode(p, &m.chromosome);
            let mut used: Vec<&str> = sys.instances.iter().map(|i| p.templates.get(i.template).id.as_str()).collect();
            used.sort_unstable();
            used.dedup();
            json!({
                "latency_cycles": m.eval.latency,
                "energy_pj": m.eval.energy,
                "area_mm2": m.eval.area,
                "n_instances": m.chromosome.hardware.len(),
                "templates_used": used,
            })
        })
        .collect();
    let mut out = json!({
        "front": front,
        "generations": artifacts.log.len(),
        "files": files,
    });
    if let Some(ab) = &artifacts.ablation {
        out["ablation"] = serde_json::to_value(ab).map_err(value_err)?;
    }
    to_py(py, &out)
}

/// Fraction of `b`'s points strictly dominated by some point of `a`.
#[pyfunction]
fn compare_fronts(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>) -> PyResult<f64> {
    engine::compare_fronts(&a, &b).map_err(value_err)
}

/// Search-space size report for a workload; sizes are decimal strings.
#[pyfunction]
#[pyo3(signature = (workload, *, max_instances = 16, templates = None))]
fn space_report(py: Python<'_>, workload: &str, max_instances: usize, templates: Option<&str>) -> PyResult<Py<PyAny>> {
    let inputs = load_inputs(workload, templates, None, None, None)?;
    let cfg = RunConfig {
        max_instances,
        catalog: CatalogOptions {
            budget: 1,
            max_front: Some(1),
        },
        ..RunConfig::default()
    };
    let problem = engine::prepare_problem(&inputs, &cfg).map_err(value_err)?;
    to_py(py, &serde_json::to_value(engine::space_report(&problem)).map_err(value_err)?)
}

#[pyfunction]
fn modes() -> Vec<&'static str> {
    Mode::ALL.iter().map(|m| m.name()).collect()
}

#[pyfunction]
fn operators() -> Vec<&'static str> {
    Operator::ALL.iter().map(|o| o.name()).collect()
}

#[pymodule]
fn comap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(compare_fronts, m)?)?;
    m.add_function(wrap_pyfunction!(space_report, m)?)?;
    m.add_function(wrap_pyfunction!(modes, m)?)?;
    m.add_function(wrap_pyfunction!(operators, m)?)?;
    Ok(())
}
