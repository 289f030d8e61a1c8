//! Python module `agile`.
//!
//! Build with `--features extension-module` and copy the shared library to
//! `agile.so` (or `agile.pyd`) on the Python path. Structured results come
//! back as plain dicts.

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use agile_core::calibration::{self, BoundarySearchConfig};
use agile_core::config::{load_config, RunConfig};
use agile_core::efficacy::{self, EfficacyConfig, StoppingBoundaries, Subject};
use agile_core::escalation::EscalationPolicy;
use agile_core::outcomes;
use agile_core::safety_mono::{self, ArmCounts, MonoPosterior, SafetyPriorMono};
use agile_core::scenario::{self, Scenario};
use agile_core::trial::{self, MonoModel, TrialConfig};

fn err(e: agile_core::Error) -> PyErr {
    match e {
        agile_core::Error::UnknownScenario(s) => PyKeyError::new_err(s),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn scenario_by_name(name: &str) -> PyResult<Scenario> {
    let parts: Vec<&str> = name.split('-').collect();
    let (kind, s, e) = match parts.as_slice() {
        [k, s, e] => (*k, s.parse::<usize>(), e.parse::<usize>()),
        _ => return Err(PyKeyError::new_err(name.to_string())),
    };
    let (Ok(s), Ok(e)) = (s, e) else {
        return Err(PyKeyError::new_err(name.to_string()));
    };
    match kind {
        "single" => scenario::single_agent(s, e).map_err(err),
        "combo" => scenario::combination(s, e).map_err(err),
        _ => Err(PyKeyError::new_err(name.to_string())),
    }
}

/// Logistic DLE probability at standardized dose `d`.
#[pyfunction]
fn dle_probability(theta1: f64, theta2: f64, d: f64) -> f64 {
    safety_mono::dle_probability(theta1, theta2, d)
}

/// Single-agent safety model with posterior summaries.
#[pyclass(module = "agile", frozen)]
struct MonoSafety {
    prior: SafetyPriorMono,
    model: MonoModel,
    policy: EscalationPolicy,
}

#[pymethods]
impl MonoSafety {
    #[new]
    #[pyo3(signature = (doses=3, p0=0.10, nu=0.125, mu2=-0.25, var1=1.40, var2=0.35, gamma=0.20, delta=0.05, c_overdose=0.25))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        doses: usize,
        p0: f64,
        nu: f64,
        mu2: f64,
        var1: f64,
        var2: f64,
        gamma: f64,
        delta: f64,
        c_overdose: f64,
    ) -> PyResult<Self> {
        let prior = SafetyPriorMono::new(p0, nu, mu2, var1, var2).map_err(err)?;
        let policy = EscalationPolicy { gamma, delta, c_overdose };
        policy.validate().map_err(err)?;
        Ok(Self {
            model: MonoModel::new(prior, doses).map_err(err)?,
            prior,
            policy,
        })
    }

    /// Standardized dose levels, control first.
    fn skeleton(&self) -> Vec<f64> {
        self.model.skeleton.levels().to_vec()
    }

    /// Per active dose `(P(overdose), P(target))` given patients and DLEs per
    /// arm, control first.
    fn summarize(&self, patients: Vec<u32>, dle: Vec<u32>) -> PyResult<Vec<(f64, f64)>> {
        let counts = self.counts(patients, dle)?;
        let post = MonoPosterior::fit(&self.prior, &self.model.skeleton, &counts).map_err(err)?;
        Ok(safety_mono::summarize_doses(&post, &self.policy)
            .iter()
            .map(|s| (s.p_overdose, s.p_target))
            .collect())
    }

    /// Next dose from `current`, or None for a safety stop.
    fn next_dose(&self, current: usize, patients: Vec<u32>, dle: Vec<u32>) -> PyResult<Option<usize>> {
        let summary = self.summarize(patients, dle)?;
        let over: Vec<f64> = summary.iter().map(|s| s.0).collect();
        let target: Vec<f64> = summary.iter().map(|s| s.1).collect();
        let safe = safety_mono::safe_dose_set(&over, &self.policy);
        Ok(safety_mono::select_next_dose(current, &safe, &target).next(current))
    }
}

impl MonoSafety {
    fn counts(&self, patients: Vec<u32>, dle: Vec<u32>) -> PyResult<ArmCounts> {
        let arms = self.model.skeleton.arms();
        if patients.len() != arms || dle.len() != arms {
            return Err(PyValueError::new_err(format!("expected {arms} arms including control")));
        }
        if patients.iter().zip(&dle).any(|(n, y)| y > n) {
            return Err(PyValueError::new_err("more DLEs than patients"));
        }
        Ok(ArmCounts { patients, dle })
    }
}

/// Cox log partial likelihood (Breslow ties) at a fixed hazard ratio.
#[pyfunction]
fn cox_log_partial_likelihood(times: Vec<f64>, events: Vec<bool>, treated: Vec<bool>, hr: f64) -> PyResult<f64> {
    let data = subjects(times, events, treated)?;
    efficacy::cox_log_partial_likelihood(&data, hr).map_err(err)
}

/// Point-prior posterior probability that the hazard ratio is `target_hr`.
#[pyfunction]
#[pyo3(signature = (times, events, treated, target_hr=1.75, prior_efficacy=0.5))]
fn posterior_efficacy_probability(
    times: Vec<f64>,
    events: Vec<bool>,
    treated: Vec<bool>,
    target_hr: f64,
    prior_efficacy: f64,
) -> PyResult<f64> {
    let data = subjects(times, events, treated)?;
    let cfg = EfficacyConfig {
        target_hr,
        prior_efficacy,
        ..EfficacyConfig::default()
    };
    efficacy::posterior_efficacy_probability(&data, &cfg).map_err(err)
}

fn subjects(times: Vec<f64>, events: Vec<bool>, treated: Vec<bool>) -> PyResult<Vec<Subject>> {
    if times.len() != events.len() || times.len() != treated.len() {
        return Err(PyValueError::new_err("times, events and treated differ in length"));
    }
    Ok(times
        .into_iter()
        .zip(events)
        .zip(treated)
        .enumerate()
        .map(|(i, ((time, event), treated))| Subject {
            id: i as u64,
            treated,
            time,
            event,
        })
        .collect())
}

/// Boundaries under a new prior efficacy probability.
#[pyfunction]
fn translate_boundaries(lower: f64, upper: f64, prior_old: f64, prior_new: f64) -> PyResult<(f64, f64)> {
    let b = StoppingBoundaries::new(lower, upper).map_err(err)?;
    let t = efficacy::translate_boundaries(&b, prior_old, prior_new).map_err(err)?;
    Ok((t.lower, t.upper))
}

/// Weibull survival of the improvement time.
#[pyfunction]
#[pyo3(signature = (t, hr=1.0, rate=outcomes::CONTROL_RATE, shape=outcomes::CONTROL_SHAPE))]
fn weibull_survival(t: f64, hr: f64, rate: f64, shape: f64) -> f64 {
    outcomes::weibull_survival(rate, shape, hr, t)
}

fn resolve_config(config: Option<&str>) -> PyResult<RunConfig> {
    load_config(config.unwrap_or("single-baseline")).map_err(err)
}

fn trial_parts(config: Option<&str>) -> PyResult<(RunConfig, Box<dyn trial::SafetyModel>, TrialConfig)> {
    let cfg = resolve_config(config)?;
    let model = cfg.model().map_err(err)?;
    let trial = cfg.trial;
    Ok((cfg, model, trial))
}

/// Operating characteristics of a named scenario such as `single-0-1`.
/// `config` is a TOML path or shipped configuration name; its design must
/// match the scenario.
#[pyfunction]
#[pyo3(signature = (scenario, n_sims=1000, seed=1, threads=0, config=None))]
fn simulate<'py>(
    py: Python<'py>,
    scenario: &str,
    n_sims: usize,
    seed: u64,
    threads: usize,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let sc = scenario_by_name(scenario)?;
    let default_cfg = if sc.name.starts_with("combo") { "combo-baseline" } else { "single-baseline" };
    let (_, model, trial) = trial_parts(Some(config.unwrap_or(default_cfg)))?;
    let oc = py
        .detach(|| trial::run_batch(&sc, model.as_ref(), &trial, n_sims, seed, threads))
        .map_err(err)?;
    to_py(py, &oc)
}

/// One replication with its event trace.
#[pyfunction]
#[pyo3(signature = (scenario, seed=1, config=None))]
fn run_trial<'py>(py: Python<'py>, scenario: &str, seed: u64, config: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let sc = scenario_by_name(scenario)?;
    let default_cfg = if sc.name.starts_with("combo") { "combo-baseline" } else { "single-baseline" };
    let (_, model, trial) = trial_parts(Some(config.unwrap_or(default_cfg)))?;
    let result = trial::run_trial_traced(&sc, model.as_ref(), &trial, seed).map_err(err)?;
    to_py(py, &result)
}

/// Boundary search for one cohort structure.
#[pyfunction]
#[pyo3(signature = (active_cohort=4, control_cohort=2, external_controls=30, trajectories=20000, seed=1))]
fn optimize_boundaries<'py>(
    py: Python<'py>,
    active_cohort: usize,
    control_cohort: usize,
    external_controls: usize,
    trajectories: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = BoundarySearchConfig {
        trajectories,
        ..BoundarySearchConfig::structure(active_cohort, control_cohort, external_controls)
    };
    let report = py.detach(|| calibration::optimize_boundaries(&cfg, seed)).map_err(err)?;
    let best = to_py(py, &report.best)?;
    let out = PyDict::new(py);
    out.set_item("best", best)?;
    out.set_item("feasible_pairs", report.feasible.len())?;
    out.set_item("power_se", report.power_se)?;
    Ok(out.into_any())
}

/// A run configuration as a dict.
#[pyfunction]
fn load_run_config<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &load_config(path).map_err(err)?)
}

#[pymodule]
fn agile(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<MonoSafety>()?;
    m.add_function(wrap_pyfunction!(dle_probability, m)?)?;
    m.add_function(wrap_pyfunction!(cox_log_partial_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_efficacy_probability, m)?)?;
    m.add_function(wrap_pyfunction!(translate_boundaries, m)?)?;
    m.add_function(wrap_pyfunction!(weibull_survival, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_trial, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_boundaries, m)?)?;
    m.add_function(wrap_pyfunction!(load_run_config, m)?)?;
    Ok(())
}
