//! Python bindings for `fedrec-core`.
//!
//! Results cross the boundary as plain dicts and lists so they can be fed
//! straight into pandas or json.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use fedrec_core::boost::{self, BoostOutcome};
use fedrec_core::data::StudentSkillExample;
use fedrec_core::experiment::{self, ExperimentConfig as CoreConfig, PreparedData};
use fedrec_core::fed::{self, ClientUpdate, RunHistory, StrategyConfig, StrategyKind};
use fedrec_core::metrics::{self, MetricSummary, RoundMetrics};
use fedrec_core::model::{ModelDims, ModelParams};
use fedrec_core::report;
use fedrec_core::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(_) | Error::Path { .. } => PyOSError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// Confusion counts with the derived classification metrics.
#[pyclass(name = "ConfusionCounts", module = "fedrec", eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyConfusionCounts {
    inner: metrics::ConfusionCounts,
}

#[pymethods]
impl PyConfusionCounts {
    #[new]
    #[pyo3(signature = (tp=0, fp=0, fn_=0, tn=0))]
    fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self {
            inner: metrics::ConfusionCounts::new(tp, fp, fn_, tn),
        }
    }

    /// Counts from parallel sequences of predicted and true labels.
    #[staticmethod]
    fn from_labels(predicted: Vec<bool>, actual: Vec<bool>) -> PyResult<Self> {
        if predicted.len() != actual.len() {
            return Err(to_py(Error::LengthMismatch {
                expected: predicted.len(),
                actual: actual.len(),
            }));
        }
        Ok(Self {
            inner: metrics::ConfusionCounts::from_pairs(predicted.into_iter().zip(actual)),
        })
    }

    #[getter]
    fn tp(&self) -> u64 {
        self.inner.tp
    }

    #[getter]
    fn fp(&self) -> u64 {
        self.inner.fp
    }

    #[getter(fn_)]
    fn false_negatives(&self) -> u64 {
        self.inner.fn_
    }

    #[getter]
    fn tn(&self) -> u64 {
        self.inner.tn
    }

    fn precision(&self) -> f64 {
        self.inner.precision()
    }

    fn recall(&self) -> f64 {
        self.inner.recall()
    }

    fn f1(&self) -> f64 {
        self.inner.f1()
    }

    fn accuracy(&self) -> PyResult<f64> {
        self.inner.accuracy().map_err(to_py)
    }

    fn __add__(&self, other: &Self) -> Self {
        Self {
            inner: self.inner + other.inner,
        }
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "ConfusionCounts(tp={}, fp={}, fn_={}, tn={})",
            c.tp, c.fp, c.fn_, c.tn
        )
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
#[pyfunction]
fn f1(precision: f64, recall: f64) -> f64 {
    metrics::f1(precision, recall)
}

/// Best value, its round, mean and population std of `(round, value)` pairs.
#[pyfunction]
fn summarize<'py>(py: Python<'py>, series: Vec<(usize, f64)>) -> PyResult<Bound<'py, PyDict>> {
    summary_dict(py, &metrics::summarize(&series).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (g, h, reg_lambda=1.0))]
fn leaf_weight(g: f64, h: f64, reg_lambda: f64) -> PyResult<f64> {
    boost::leaf_weight(g, h, reg_lambda).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (gl, hl, gr, hr, reg_lambda=1.0, gamma=0.0))]
fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, reg_lambda: f64, gamma: f64) -> f64 {
    boost::split_gain(gl, hl, gr, hr, reg_lambda, gamma)
}

/// Sample-weighted mean of flat parameter vectors.
///
/// `updates` holds `(client_id, params, num_examples)` triples for a network
/// with `num_users` user rows and `num_skills` skill rows.
#[pyfunction]
fn aggregate(
    updates: Vec<(usize, Vec<f64>, usize)>,
    num_users: usize,
    num_skills: usize,
) -> PyResult<Vec<f64>> {
    let dims = ModelDims::new(num_users, num_skills);
    let updates = updates
        .into_iter()
        .map(|(client_id, values, num_examples)| {
            Ok(ClientUpdate {
                client_id,
                params: ModelParams::unflatten(values, dims)?,
                num_examples,
            })
        })
        .collect::<Result<Vec<_>, Error>>()
        .map_err(to_py)?;
    Ok(fed::aggregate(&updates).map_err(to_py)?.flatten())
}

/// Flat parameter count of the default network for the given id spaces.
#[pyfunction]
fn num_params(num_users: usize, num_skills: usize) -> usize {
    ModelDims::new(num_users, num_skills).num_params()
}

/// Experiment configuration; mirrors the TOML file accepted by the CLI.
#[pyclass(name = "ExperimentConfig", module = "fedrec", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: CoreConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: CoreConfig::default(),
        }
    }

    /// The shipped desk-scale synthetic configuration.
    #[staticmethod]
    fn reference() -> Self {
        Self {
            inner: CoreConfig::reference(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = CoreConfig::from_toml_str(text).map_err(to_py)?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = CoreConfig::load(&path).map_err(to_py)?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Copy with every seeded stage reseeded.
    fn with_seed(&self, seed: u64) -> Self {
        Self {
            inner: self.inner.clone().with_seed(seed),
        }
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.inner.federated.rounds
    }

    #[setter]
    fn set_rounds(&mut self, rounds: usize) {
        self.inner.federated.rounds = rounds;
    }

    #[getter]
    fn central_rounds(&self) -> usize {
        self.inner.central.num_rounds
    }

    #[setter]
    fn set_central_rounds(&mut self, rounds: usize) {
        self.inner.central.num_rounds = rounds;
    }

    /// Names of the federated runs in the configured grid.
    fn run_names(&self) -> Vec<String> {
        self.inner
            .strategies()
            .iter()
            .map(|s| s.run_name())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(seed={}, rounds={}, strategies={:?})",
            self.inner.seed,
            self.inner.federated.rounds,
            self.run_names()
        )
    }
}

/// Engineered, scaled examples plus cohort statistics.
#[pyclass(name = "PreparedData", module = "fedrec")]
struct PyPrepared {
    inner: PreparedData,
}

#[pymethods]
impl PyPrepared {
    fn __len__(&self) -> usize {
        self.inner.examples.len()
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.cohort.users
    }

    #[getter]
    fn num_skills(&self) -> usize {
        self.inner.cohort.skills
    }

    #[getter]
    fn positive_rate(&self) -> f64 {
        self.inner.cohort.positive_rate
    }

    /// One dict per example row.
    fn examples<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let rows = PyList::empty(py);
        for e in &self.inner.examples {
            rows.append(example_dict(py, e)?)?;
        }
        Ok(rows)
    }
}

fn example_dict<'py>(py: Python<'py>, e: &StudentSkillExample) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("user_idx", e.user_idx)?;
    d.set_item("skill_idx", e.skill_idx)?;
    d.set_item("user_mean_correct", e.user_mean_correct)?;
    d.set_item("user_interaction_count", e.user_interaction_count)?;
    d.set_item("skill_mean_correct", e.skill_mean_correct)?;
    d.set_item("target_correct_rate", e.target_correct_rate)?;
    d.set_item("label", e.label)?;
    Ok(d)
}

fn round_dict<'py>(py: Python<'py>, m: &RoundMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("round", m.round)?;
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f1", m.f1)?;
    d.set_item("loss", m.loss)?;
    d.set_item("num_eval_examples", m.num_eval_examples)?;
    d.set_item("num_fit_clients", m.num_fit_clients)?;
    Ok(d)
}

fn summary_dict<'py>(py: Python<'py>, s: &MetricSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("best", s.best_value)?;
    d.set_item("best_round", s.best_round)?;
    d.set_item("mean", s.mean)?;
    d.set_item("std", s.std_dev)?;
    Ok(d)
}

fn rounds_list<'py>(py: Python<'py>, rounds: &[RoundMetrics]) -> PyResult<Bound<'py, PyList>> {
    let list = PyList::empty(py);
    for r in rounds {
        list.append(round_dict(py, r)?)?;
    }
    Ok(list)
}

fn optional_summary<'py>(
    py: Python<'py>,
    s: Option<MetricSummary>,
) -> PyResult<Option<Bound<'py, PyDict>>> {
    s.map(|s| summary_dict(py, &s)).transpose()
}

/// Runs the preprocessing pipeline described by `config`.
#[pyfunction]
fn prepare(py: Python<'_>, config: &PyConfig) -> PyResult<PyPrepared> {
    let cfg = config.inner.clone();
    let inner = py.detach(|| experiment::prepare(&cfg)).map_err(to_py)?;
    Ok(PyPrepared { inner })
}

fn central_dict<'py>(py: Python<'py>, outcome: &BoostOutcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("run", "central")?;
    d.set_item("rounds", rounds_list(py, &outcome.rounds)?)?;
    d.set_item("f1", optional_summary(py, outcome.f1_summary())?)?;
    d.set_item("train_loss", outcome.train_loss.clone())?;
    let ranking: Vec<(String, f64)> = outcome
        .importance
        .ranking()
        .into_iter()
        .map(|(n, g)| (n.to_string(), g))
        .collect();
    d.set_item("importance", ranking)?;
    Ok(d)
}

fn history_dict<'py>(py: Python<'py>, h: &RunHistory) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("run", h.config.run_name())?;
    d.set_item("rounds", rounds_list(py, &h.round_metrics())?)?;
    d.set_item("f1", optional_summary(py, h.f1_summary)?)?;
    let weighted: Vec<f64> = h.rounds.iter().map(|r| r.weighted_f1).collect();
    d.set_item("weighted_f1", weighted)?;
    Ok(d)
}

/// Trains the centralized booster on a stratified split of `data`.
#[pyfunction]
fn run_central<'py>(
    py: Python<'py>,
    config: &PyConfig,
    data: &PyPrepared,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let examples = &data.inner.examples;
    let outcome = py
        .detach(|| experiment::run_central(examples, &cfg))
        .map_err(to_py)?;
    central_dict(py, &outcome)
}

/// Runs one federated strategy (`"fedavg"` or `"fedprox"`) over `data`.
#[pyfunction]
#[pyo3(signature = (config, data, strategy="fedavg", mu=0.0))]
fn run_federated<'py>(
    py: Python<'py>,
    config: &PyConfig,
    data: &PyPrepared,
    strategy: &str,
    mu: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = match strategy {
        "fedavg" => StrategyKind::FedAvg,
        "fedprox" => StrategyKind::FedProx,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown strategy {other:?}; expected \"fedavg\" or \"fedprox\""
            )))
        }
    };
    let cfg = config.inner.clone();
    let f = &cfg.federated;
    let s = StrategyConfig {
        kind,
        mu,
        rounds: f.rounds,
        fraction_fit: f.fraction_fit,
        min_fit_clients: f.min_fit_clients,
        local_epochs: f.local_epochs,
        learning_rate: f.learning_rate,
        batch_size: f.batch_size,
        optimizer: f.optimizer,
        seed: cfg.seed,
    };
    s.validate().map_err(to_py)?;
    let examples = &data.inner.examples;
    let (history, _) = py
        .detach(|| experiment::run_federated(examples, &cfg, &s))
        .map_err(to_py)?;
    history_dict(py, &history)
}

/// Central baseline plus every configured federated strategy, with the
/// comparison table.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let (central, histories) = py
        .detach(|| -> fedrec_core::Result<_> {
            let prepared = experiment::prepare(&cfg)?;
            let central = experiment::run_central(&prepared.examples, &cfg)?;
            let histories = cfg
                .strategies()
                .iter()
                .map(|s| experiment::run_federated(&prepared.examples, &cfg, s).map(|(h, _)| h))
                .collect::<fedrec_core::Result<Vec<_>>>()?;
            Ok((central, histories))
        })
        .map_err(to_py)?;

    let mut summaries = vec![report::RunSummary::new(
        "central",
        "central",
        None,
        central.rounds.len(),
        central.f1_summary(),
        serde_json::Value::Null,
    )];
    for h in &histories {
        summaries.push(report::RunSummary::new(
            h.config.run_name(),
            match h.config.kind {
                StrategyKind::FedAvg => "fedavg",
                StrategyKind::FedProx => "fedprox",
            },
            Some(h.config.mu),
            h.rounds.len(),
            h.f1_summary,
            serde_json::Value::Null,
        ));
    }
    let cmp = report::compare(&summaries).map_err(to_py)?;

    let d = PyDict::new(py);
    d.set_item("central", central_dict(py, &central)?)?;
    let runs = PyList::empty(py);
    for h in &histories {
        runs.append(history_dict(py, h)?)?;
    }
    d.set_item("federated", runs)?;
    d.set_item("privacy_cost_ratio", cmp.privacy_cost_ratio)?;
    d.set_item("stability_ranking", cmp.stability_ranking.clone())?;
    d.set_item("table", cmp.to_text())?;
    Ok(d)
}

#[pymodule]
fn fedrec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfusionCounts>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyPrepared>()?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(leaf_weight, m)?)?;
    m.add_function(wrap_pyfunction!(split_gain, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(num_params, m)?)?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(run_central, m)?)?;
    m.add_function(wrap_pyfunction!(run_federated, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
