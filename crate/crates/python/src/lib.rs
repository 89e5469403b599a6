//! Python module `boom`: configs, training, environments, value bins,
//! checkpoints and the verification lab.

use std::path::PathBuf;

use boom_core::envs;
use boom_core::theory_lab::{self, FitMetric, KlFitConfig, VerifyConfig};
use boom_core::trainer::{self, RunPaths, METRICS_HEADER};
use boom_core::world_model::{BinSpec as CoreBinSpec, BinTransform, LatentState};
use boom_core::BoomError;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: BoomError) -> PyErr {
    match e {
        BoomError::Config(_) | BoomError::InvalidSpec(_) | BoomError::DimensionMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_transform(name: &str) -> PyResult<BinTransform> {
    match name {
        "linear" => Ok(BinTransform::Linear),
        "symlog" => Ok(BinTransform::SymLog),
        other => Err(PyValueError::new_err(format!(
            "unknown transform '{other}' (expected linear or symlog)"
        ))),
    }
}

fn parse_metric(name: &str) -> PyResult<FitMetric> {
    match name {
        "forward_kl" => Ok(FitMetric::ForwardKL),
        "reverse_kl" => Ok(FitMetric::ReverseKL),
        other => Err(PyValueError::new_err(format!(
            "unknown metric '{other}' (expected forward_kl or reverse_kl)"
        ))),
    }
}

/// Flat key=value training configuration.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
pub struct TrainConfig {
    inner: trainer::TrainConfig,
}

#[pymethods]
impl TrainConfig {
    /// Defaults, then `overrides` (a dict of key -> value).
    #[new]
    #[pyo3(signature = (overrides = None))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = trainer::TrainConfig::default();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                inner
                    .set(&k.str()?.to_string(), &v.str()?.to_string())
                    .map_err(py_err)?;
            }
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: trainer::TrainConfig::parse_text(text).map_err(py_err)?,
        })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set(key, &value.str()?.to_string()).map_err(py_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown config key '{key}'")))
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        trainer::CONFIG_KEYS.to_vec()
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig(env={}, seed={})", self.inner.env, self.inner.seed)
    }
}

/// Trains one agent. With `out_dir`, writes metrics.csv, timing.csv,
/// checkpoint.bin and config.txt there. Returns the final eval return and
/// the metrics rows as dicts keyed by the CSV header.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None))]
fn train<'py>(
    py: Python<'py>,
    config: &TrainConfig,
    out_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    cfg.validate().map_err(py_err)?;
    let paths = match &out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| py_err(e.into()))?;
            std::fs::write(d.join("config.txt"), cfg.to_text()).map_err(|e| py_err(e.into()))?;
            RunPaths::in_dir(d)
        }
        None => RunPaths {
            metrics: None,
            timing: None,
            checkpoint: None,
            plan_trace: None,
        },
    };
    let summary = py.detach(|| trainer::run(cfg, &paths)).map_err(py_err)?;
    let names: Vec<&str> = METRICS_HEADER.split(',').collect();
    let rows = summary
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item(names[0], r.env_step)?;
            for (name, v) in names[1..].iter().zip(r.values()) {
                d.set_item(*name, v)?;
            }
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out = PyDict::new(py);
    out.set_item("final_eval_return", summary.final_eval_return)?;
    out.set_item("rows", rows)?;
    Ok(out)
}

/// Control environment by name: "pointmass" or "pendulum".
#[pyclass(unsendable)]
pub struct Env {
    inner: Box<dyn envs::Env>,
}

#[pymethods]
impl Env {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: envs::make_env(name).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed)
    }

    /// Returns `(observation, reward, done)`.
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool)> {
        let r = self.inner.step(&action).map_err(py_err)?;
        Ok((r.observation, r.reward, r.done))
    }
}

#[pyfunction]
fn random_policy_return(env: &str, episodes: usize, seed: u64) -> PyResult<f64> {
    envs::random_policy_return(env, episodes, seed).map_err(py_err)
}

/// Discretised value support with two-hot targets.
#[pyclass]
pub struct BinSpec {
    inner: CoreBinSpec,
}

#[pymethods]
impl BinSpec {
    #[new]
    #[pyo3(signature = (num_bins = 101, v_min = -10.0, v_max = 10.0, transform = "symlog"))]
    fn new(num_bins: usize, v_min: f64, v_max: f64, transform: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreBinSpec::new(num_bins, v_min, v_max, parse_transform(transform)?).map_err(py_err)?,
        })
    }

    fn two_hot(&self, v: f64) -> Vec<f64> {
        self.inner.two_hot_encode(v)
    }

    fn decode(&self, logits: Vec<f64>) -> PyResult<f64> {
        if logits.len() != self.inner.num_bins {
            return Err(PyValueError::new_err(format!(
                "expected {} logits, got {}",
                self.inner.num_bins,
                logits.len()
            )));
        }
        Ok(self.inner.decode(&logits))
    }

    fn centers(&self) -> Vec<f64> {
        self.inner.centers()
    }
}

/// Trained world model and policy loaded from a checkpoint file.
#[pyclass]
pub struct Agent {
    inner: trainer::Checkpoint,
}

#[pymethods]
impl Agent {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: trainer::load_checkpoint(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn config_text(&self) -> String {
        self.inner.config_text.clone()
    }

    fn encode(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.model.encode(&obs).map_err(py_err)?.0)
    }

    fn latent_step(&self, z: Vec<f64>, action: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .model
            .latent_step(&LatentState(z), &action)
            .map_err(py_err)?
            .0)
    }

    /// Squashed policy mean at the encoded observation.
    fn act(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        let z = self.inner.model.encode(&obs).map_err(py_err)?;
        let d = self.inner.policy.forward(&z).map_err(py_err)?;
        Ok(d.mean.iter().map(|m| if d.squashed { m.tanh() } else { *m }).collect())
    }
}

#[pyfunction]
#[pyo3(signature = (q_values, tau = 1.0))]
fn soft_q_weights(q_values: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    if !(tau > 0.0) || q_values.is_empty() {
        return Err(PyValueError::new_err("need tau > 0 and at least one value"));
    }
    Ok(boom_core::policy::soft_q_weights(&q_values, tau))
}

/// Runs every bound check. Returns `(failures, reports)` where each report is
/// a dict keyed by the reports.csv header; with `out_dir`, also writes the
/// report files there.
#[pyfunction]
#[pyo3(signature = (seed = 0, bound_scale = 1.0, out_dir = None))]
fn verify<'py>(
    py: Python<'py>,
    seed: u64,
    bound_scale: f64,
    out_dir: Option<PathBuf>,
) -> PyResult<(usize, Vec<Bound<'py, PyDict>>)> {
    let cfg = VerifyConfig {
        seed,
        bound_scale,
        ..VerifyConfig::default()
    };
    let out = py.detach(|| theory_lab::run_all(&cfg)).map_err(py_err)?;
    if let Some(d) = &out_dir {
        out.write_to_dir(d).map_err(py_err)?;
    }
    let reports = out
        .reports
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("check", &r.check)?;
            d.set_item("asserted", r.asserted)?;
            d.set_item("passed", r.passed)?;
            d.set_item("trials", r.trials)?;
            d.set_item("violations", r.violations)?;
            d.set_item("empirical", r.empirical)?;
            d.set_item("bound", r.bound)?;
            d.set_item("epsilon", r.epsilon)?;
            d.set_item("delta", r.delta)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((out.failures(), reports))
}

/// Fits a Gaussian to the mixture `0.5 N(-m, 1) + 0.5 N(m, 1)`; returns
/// `(mean, std)`.
#[pyfunction]
#[pyo3(signature = (metric, separation = 2.0, seed = 0))]
fn kl_fit(metric: &str, separation: f64, seed: u64) -> PyResult<(f64, f64)> {
    let target = theory_lab::bimodal_target(separation);
    let r = theory_lab::kl_fit_demo(&target, parse_metric(metric)?, &KlFitConfig::default(), seed)
        .map_err(py_err)?;
    Ok((r.mean, r.std))
}

#[pymodule]
fn boom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TrainConfig>()?;
    m.add_class::<Env>()?;
    m.add_class::<BinSpec>()?;
    m.add_class::<Agent>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(random_policy_return, m)?)?;
    m.add_function(wrap_pyfunction!(soft_q_weights, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(kl_fit, m)?)?;
    Ok(())
}
