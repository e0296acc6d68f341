//! Python bindings for the robust ad hoc teamwork library.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};
use serde_json::{Map, Number, Value};

use robust_aht::evaluation::{self, MetricsRecord};
use robust_aht::solver::{self, SolverConfig};
use robust_aht::{canonical, io, Error, History, PolicySet, Prior, RepeatedGame, StochasticPolicy};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A finitely repeated normal-form game.
#[pyclass(name = "Game", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGame {
    inner: Arc<RepeatedGame>,
}

#[pymethods]
impl PyGame {
    /// The iterated prisoner's dilemma with payoffs CC=4, CD=0, DC=5, DD=1.
    #[staticmethod]
    #[pyo3(signature = (horizon=3))]
    fn prisoners_dilemma(horizon: usize) -> Self {
        Self {
            inner: Arc::new(RepeatedGame::prisoners_dilemma(horizon)),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let game = io::game_from_json(text, &PathBuf::from("<string>")).map_err(py_err)?;
        Ok(Self { inner: Arc::new(game) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(io::read_game(&path).map_err(py_err)?),
        })
    }

    fn to_json(&self) -> String {
        io::game_to_json(&self.inner).to_string()
    }

    #[getter]
    fn players(&self) -> usize {
        self.inner.num_players()
    }

    #[getter]
    fn actions(&self) -> Vec<String> {
        self.inner.actions().to_vec()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    /// Index of a joint action given one action index per player.
    fn encode(&self, actions: Vec<usize>) -> PyResult<usize> {
        if actions.len() != self.inner.num_players() || actions.iter().any(|&a| a >= self.inner.num_actions()) {
            return Err(PyValueError::new_err("one valid action index per player expected"));
        }
        Ok(self.inner.encode(&actions))
    }

    fn rewards(&self, joint: usize) -> PyResult<Vec<f64>> {
        if joint >= self.inner.num_joint() {
            return Err(PyValueError::new_err(format!("joint action {joint} out of range")));
        }
        Ok(self.inner.rewards(joint).to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Game(players={}, actions={:?}, horizon={})",
            self.inner.num_players(),
            self.inner.actions(),
            self.inner.horizon()
        )
    }
}

/// A tabulated stochastic policy: one action distribution per history.
#[pyclass(name = "Policy", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    game: Arc<RepeatedGame>,
    table: StochasticPolicy,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn uniform(game: &PyGame) -> Self {
        Self {
            game: game.inner.clone(),
            table: StochasticPolicy::uniform(&game.inner),
        }
    }

    /// Build from a flat row-major table of `num_nodes * num_actions` probabilities.
    #[staticmethod]
    fn from_probs(game: &PyGame, probs: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            game: game.inner.clone(),
            table: StochasticPolicy::new(&game.inner, probs).map_err(py_err)?,
        })
    }

    /// Load a rule or table policy file and tabulate it.
    #[staticmethod]
    fn load(game: &PyGame, path: PathBuf) -> PyResult<Self> {
        let p = io::read_policy(&game.inner, &path).map_err(py_err)?;
        Ok(Self {
            game: game.inner.clone(),
            table: p.tabulate(&game.inner).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_policy(&path, &self.game, &robust_aht::Policy::Stochastic(self.table.clone())).map_err(py_err)
    }

    fn probs(&self) -> Vec<f64> {
        self.table.probs().to_vec()
    }

    /// Action distribution at a history of joint-action indices, seen from `seat`.
    #[pyo3(signature = (history, seat=0))]
    fn act(&self, history: Vec<usize>, seat: usize) -> PyResult<Vec<f64>> {
        if history.len() >= self.game.horizon() || history.iter().any(|&j| j >= self.game.num_joint()) {
            return Err(PyValueError::new_err("not a decision history of this game"));
        }
        robust_aht::Policy::Stochastic(self.table.clone())
            .act(&self.game, &History::new(history), seat)
            .map_err(py_err)
    }
}

/// A named collection of partner policies.
#[pyclass(name = "Population", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPopulation {
    inner: PolicySet,
}

#[pymethods]
impl PyPopulation {
    /// The nine canonical two-action rules (needs actions labelled C and D).
    #[staticmethod]
    fn canonical(game: &PyGame) -> PyResult<Self> {
        Ok(Self {
            inner: canonical::canonical_population_for(&game.inner).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(game: &PyGame, path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_population(&game.inner, &path).map_err(py_err)?,
        })
    }

    /// Partners drawn from epsilon-balls around this population's members.
    fn perturbed(&self, game: &PyGame, epsilon: f64, count: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: evaluation::generate_test_population(&game.inner, &self.inner, epsilon, count, seed)
                .map_err(py_err)?,
        })
    }

    fn save(&self, game: &PyGame, path: PathBuf) -> PyResult<()> {
        io::write_population(&path, &game.inner, &self.inner).map_err(py_err)
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids().map(String::from).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &MetricsRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scenario_set", &m.scenario_set_name)?;
    d.set_item("u_avg", m.u_avg)?;
    d.set_item("u_min", m.u_min)?;
    d.set_item("r_max", m.r_max)?;
    d.set_item("scenario_ids", &m.scenario_ids)?;
    d.set_item("utilities", &m.utilities)?;
    d.set_item("regrets", &m.regrets)?;
    d.set_item("exact", &m.exactness_flags)?;
    Ok(d)
}

/// Scenarios with tabulated partners and cached response values.
#[pyclass(name = "Arena", frozen)]
struct PyArena {
    inner: robust_aht::Arena,
}

impl PyArena {
    fn check(&self, policy: &PyPolicy) -> PyResult<()> {
        if *policy.game != *self.inner.game() {
            return Err(PyValueError::new_err("policy belongs to a different game"));
        }
        Ok(())
    }
}

#[pymethods]
impl PyArena {
    /// One scenario per background policy plus self-play.
    #[staticmethod]
    fn training(game: &PyGame, population: &PyPopulation) -> PyResult<Self> {
        Ok(Self {
            inner: evaluation::training_arena(game.inner.clone(), &population.inner).map_err(py_err)?,
        })
    }

    /// One scenario per distinct test partner plus self-play.
    #[staticmethod]
    fn test(game: &PyGame, partners: &PyPopulation) -> PyResult<Self> {
        Ok(Self {
            inner: evaluation::test_arena(game.inner.clone(), &partners.inner).map_err(py_err)?,
        })
    }

    fn scenario_ids(&self) -> Vec<String> {
        self.inner.scenario_ids()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn utilities(&self, policy: &PyPolicy) -> PyResult<Vec<f64>> {
        self.check(policy)?;
        self.inner.utilities(&policy.table).map_err(py_err)
    }

    fn regrets(&self, policy: &PyPolicy) -> PyResult<Vec<f64>> {
        self.check(policy)?;
        self.inner.regrets(&policy.table).map_err(py_err)
    }

    /// Exact best-response value per scenario.
    fn best_response_values(&self) -> PyResult<Vec<f64>> {
        self.inner.best_values().map_err(py_err)
    }

    fn bayes_utility(&self, policy: &PyPolicy, prior: Vec<f64>) -> PyResult<f64> {
        self.check(policy)?;
        let prior = Prior::new(prior).map_err(py_err)?;
        self.inner.bayes_utility(&policy.table, &prior).map_err(py_err)
    }

    fn bayes_regret(&self, policy: &PyPolicy, prior: Vec<f64>) -> PyResult<f64> {
        self.check(policy)?;
        let prior = Prior::new(prior).map_err(py_err)?;
        self.inner.bayes_regret(&policy.table, &prior).map_err(py_err)
    }

    /// Mean and worst-case utility and worst-case regret.
    fn evaluate<'py>(&self, py: Python<'py>, policy: &PyPolicy) -> PyResult<Bound<'py, PyDict>> {
        self.check(policy)?;
        let m = evaluation::evaluate_metrics(&policy.table, &self.inner).map_err(py_err)?;
        metrics_dict(py, &m)
    }
}

/// Outcome of a training run.
#[pyclass(name = "TrainResult", frozen)]
struct PyTrainResult {
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    policy: PyPolicy,
    #[pyo3(get)]
    prior: Vec<f64>,
    #[pyo3(get)]
    prior_scenarios: Vec<String>,
    #[pyo3(get)]
    selected_iter: usize,
    records: Vec<solver::IterRecord>,
}

#[pymethods]
impl PyTrainResult {
    /// Per-iteration records as dictionaries.
    fn trace<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.records
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("iter", r.iter)?;
                d.set_item("beta", &r.beta)?;
                d.set_item("bayes_utility", r.bayes_utility)?;
                d.set_item("bayes_regret", r.bayes_regret)?;
                d.set_item("u_min", r.u_min)?;
                d.set_item("r_max", r.r_max)?;
                d.set_item("grad_norm_theta", r.grad_norm_theta)?;
                Ok(d)
            })
            .collect()
    }
}

fn json_value(v: &Bound<'_, PyAny>) -> PyResult<Value> {
    if v.is_none() {
        Ok(Value::Null)
    } else if v.is_instance_of::<PyBool>() {
        Ok(Value::Bool(v.extract()?))
    } else if v.is_instance_of::<PyInt>() {
        Ok(Value::Number(v.extract::<u64>()?.into()))
    } else if v.is_instance_of::<PyFloat>() {
        Number::from_f64(v.extract()?)
            .map(Value::Number)
            .ok_or_else(|| PyValueError::new_err("non-finite number"))
    } else if v.is_instance_of::<PyString>() {
        Ok(Value::String(v.extract()?))
    } else {
        Err(PyValueError::new_err(format!("unsupported option value {v}")))
    }
}

/// Train a focal policy. Keyword options are solver settings such as
/// `iterations`, `eta_theta`, `eta_beta`, `seed` or `mode`.
#[pyfunction]
#[pyo3(signature = (arena, method, **options))]
fn train(py: Python<'_>, arena: &PyArena, method: &str, options: Option<&Bound<'_, PyDict>>) -> PyResult<PyTrainResult> {
    let mut map = Map::new();
    map.insert("method".into(), Value::String(method.into()));
    if let Some(opts) = options {
        for (k, v) in opts.iter() {
            map.insert(k.extract()?, json_value(&v)?);
        }
    }
    let config: SolverConfig =
        serde_json::from_value(Value::Object(map)).map_err(|e| PyValueError::new_err(e.to_string()))?;
    config.validate().map_err(py_err)?;
    let trace = py.detach(|| solver::train(&config, &arena.inner)).map_err(py_err)?;
    Ok(PyTrainResult {
        method: trace.method.name().to_string(),
        policy: PyPolicy {
            game: arena.inner.game_arc(),
            table: trace.policy(),
        },
        prior: trace.prior.weights().to_vec(),
        prior_scenarios: trace.prior_scenarios.clone(),
        selected_iter: trace.selected_iter,
        records: trace.records,
    })
}

/// Euclidean projection onto the probability simplex.
#[pyfunction]
fn project_simplex(v: Vec<f64>) -> PyResult<Vec<f64>> {
    robust_aht::project_simplex(&v).map_err(py_err)
}

/// Best and worst response gap for every scenario of a population.
#[pyfunction]
#[pyo3(signature = (game, population, focal_counts=None))]
fn check_non_degenerative<'py>(
    py: Python<'py>,
    game: &PyGame,
    population: &PyPopulation,
    focal_counts: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyDict>> {
    let counts = focal_counts.unwrap_or_else(|| vec![1, game.inner.num_players()]);
    let r = evaluation::check_non_degenerative(game.inner.clone(), &population.inner, &counts).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("scenario_ids", r.scenario_ids)?;
    d.set_item("best", r.best)?;
    d.set_item("worst", r.worst)?;
    d.set_item("gaps", r.gaps)?;
    d.set_item("non_degenerative", r.non_degenerative)?;
    Ok(d)
}

#[pymodule]
fn robust_aht_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGame>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyPopulation>()?;
    m.add_class::<PyArena>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(project_simplex, m)?)?;
    m.add_function(wrap_pyfunction!(check_non_degenerative, m)?)?;
    Ok(())
}
