//! Python bindings: configuration, training, evaluation and the numerical
//! building blocks (Barlow loss, GAE, adaptive learning rate, terrain tiles).
//!
//! Structured results (metrics, evaluation reports, gradient-check reports)
//! cross the boundary as plain dicts and lists.

use std::path::PathBuf;
use std::time::Instant;

use barlowwalk::barlow;
use barlowwalk::config::TrainConfig;
use barlowwalk::eval;
use barlowwalk::gradcheck;
use barlowwalk::ppo;
use barlowwalk::terrain::{self, Family};
use barlowwalk::trainer::{self, Checkpoint};
use barlowwalk::Error;
use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Dimension { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py_object<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_family(name: &str) -> PyResult<Family> {
    name.parse::<Family>().map_err(to_py_err)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Training configuration. Built from defaults, optionally overlaid with a
/// TOML document and `key=value` overrides.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml=None, overrides=Vec::new()))]
    fn new(toml: Option<&str>, overrides: Vec<String>) -> PyResult<Self> {
        let inner = TrainConfig::from_toml_str(toml.unwrap_or(""), &overrides).map_err(to_py_err)?;
        Ok(PyConfig { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.trainer.seed
    }

    #[getter]
    fn num_envs(&self) -> usize {
        self.inner.trainer.num_envs
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size()
    }
}

/// An in-process trainer. `iterate()` runs one rollout and PPO update.
#[pyclass(name = "Trainer", unsendable)]
pub struct PyTrainer {
    inner: trainer::Trainer,
    started: Instant,
}

#[pymethods]
impl PyTrainer {
    #[new]
    fn new(config: PyConfig) -> PyResult<Self> {
        Ok(PyTrainer {
            inner: trainer::Trainer::new(config.inner).map_err(to_py_err)?,
            started: Instant::now(),
        })
    }

    #[staticmethod]
    fn from_checkpoint(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrainer {
            inner: trainer::Trainer::from_checkpoint(&path).map_err(to_py_err)?,
            started: Instant::now(),
        })
    }

    /// Runs one iteration and returns its metrics record.
    fn iterate(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let m = self.inner.iterate(self.started).map_err(to_py_err)?;
        to_py_object(py, &m)
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        let elapsed = self.inner.elapsed_before + self.started.elapsed().as_secs_f64();
        self.inner.save_checkpoint(&path, elapsed).map_err(to_py_err)
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration
    }

    /// Parameter names with their shapes.
    fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.inner
            .learner
            .params
            .iter()
            .map(|e| (e.name.clone(), e.shape.clone()))
            .collect()
    }
}

/// Height grid of one terrain tile, indexed `[x][y]`.
#[pyfunction]
fn generate_tile(family: &str, level: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let tile = terrain::generate_tile(parse_family(family)?, level, seed).map_err(to_py_err)?;
    let (nx, ny) = (tile.field.nx, tile.field.ny);
    Ok((0..nx).map(|i| (0..ny).map(|j| tile.height(i, j)).collect()).collect())
}

/// Barlow Twins loss between two batches of embeddings, rows are samples.
#[pyfunction]
#[pyo3(signature = (u_old, u_new, lam=5e-3))]
fn barlow_loss(u_old: Vec<Vec<f64>>, u_new: Vec<Vec<f64>>, lam: f64) -> PyResult<f64> {
    let (a, b) = (matrix(u_old)?, matrix(u_new)?);
    let c = barlow::cross_corr(a.view(), b.view(), false).map_err(to_py_err)?;
    Ok(barlow::barlow_loss(&c, lam))
}

/// Advantages and returns; `values` carries one extra bootstrap entry.
#[pyfunction]
#[pyo3(signature = (rewards, values, dones, gamma=0.99, lam=0.95))]
fn compute_gae(
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    gamma: f64,
    lam: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    if values.len() != rewards.len() + 1 || dones.len() != rewards.len() {
        return Err(PyValueError::new_err(
            "expected len(values) == len(rewards) + 1 == len(dones) + 1",
        ));
    }
    Ok(ppo::compute_gae(&rewards, &values, &dones, gamma, lam))
}

#[pyfunction]
fn adapt_lr(lr: f64, kl: f64, desired_kl: f64) -> f64 {
    ppo::adapt_lr(lr, kl, desired_kl)
}

/// Deterministic evaluation of a checkpoint on one family and level.
#[pyfunction]
#[pyo3(signature = (checkpoint, family="rough", level=0, episodes=10, seed=0))]
fn evaluate(
    py: Python<'_>,
    checkpoint: PathBuf,
    family: &str,
    level: usize,
    episodes: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let ck = Checkpoint::load(&checkpoint).map_err(to_py_err)?;
    let report = eval::evaluate(ck.config(), &ck.model, &ck.params, parse_family(family)?, level, episodes, seed)
        .map_err(to_py_err)?;
    to_py_object(py, &report)
}

/// Latent export as CSV text.
#[pyfunction]
#[pyo3(signature = (checkpoint, families=None, seed=0))]
fn export_latents(checkpoint: PathBuf, families: Option<Vec<String>>, seed: u64) -> PyResult<String> {
    let ck = Checkpoint::load(&checkpoint).map_err(to_py_err)?;
    let cfg = ck.config();
    let families = match families {
        Some(names) => names.iter().map(|n| parse_family(n)).collect::<PyResult<Vec<_>>>()?,
        None => cfg.eval.latent_families.clone(),
    };
    let table = eval::export_latents(
        cfg,
        &ck.model,
        &ck.params,
        &families,
        cfg.eval.latent_level,
        cfg.eval.latent_envs,
        cfg.eval.latent_steps,
        seed,
    )
    .map_err(to_py_err)?;
    Ok(table.to_csv())
}

/// Finite-difference gradient check of every network over the given seeds.
#[pyfunction]
fn check_gradients(py: Python<'_>, seeds: Vec<u64>) -> PyResult<Py<PyAny>> {
    let reports = gradcheck::run_suite(&seeds).map_err(to_py_err)?;
    to_py_object(py, &reports)
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(generate_tile, m)?)?;
    m.add_function(wrap_pyfunction!(barlow_loss, m)?)?;
    m.add_function(wrap_pyfunction!(compute_gae, m)?)?;
    m.add_function(wrap_pyfunction!(adapt_lr, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(export_latents, m)?)?;
    m.add_function(wrap_pyfunction!(check_gradients, m)?)?;
    Ok(())
}

#[pymodule]
fn barlowwalk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
