//! Python bindings: bandit, CEM, Q-model, surrogate environments, training,
//! the outer loop and the removal schedule.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scaffold_core::bandit::ZoomingState;
use scaffold_core::cem::{cem_argmax as core_cem, CemConfig};
use scaffold_core::curriculum::RemovalSchedule;
use scaffold_core::envs::{EnvConfig, Scene, TaskKind};
use scaffold_core::geometry::ActionBox;
use scaffold_core::innerloop::{train_policy, Environment, PolicyDump, SurrogateEnv, TrainConfig};
use scaffold_core::orchestrator::{run_outer_loop, test_time_policy, FixtureMode, OuterConfig};
use scaffold_core::qmodel::{self, QModelConfig, QSample};

fn err(e: scaffold_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn make_box(lower: Vec<f64>, upper: Vec<f64>) -> PyResult<ActionBox> {
    ActionBox::new(lower, upper).map_err(err)
}

fn task(name: &str) -> PyResult<EnvConfig> {
    TaskKind::parse(name)
        .map(EnvConfig::for_task)
        .ok_or_else(|| PyValueError::new_err(format!("unknown task `{name}` (insertion, wrench, sd-insertion)")))
}

fn scene(env: &EnvConfig, fixture: &str) -> PyResult<Scene> {
    FixtureMode::parse(fixture).and_then(|m| m.scene(env)).map_err(err)
}

/// Smoothed Zooming bandit over a box, with its own seeded RNG.
#[pyclass(name = "Zooming")]
struct PyZooming {
    state: ZoomingState,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyZooming {
    #[new]
    #[pyo3(signature = (lower, upper, h, horizon, seed = 0))]
    fn new(lower: Vec<f64>, upper: Vec<f64>, h: f64, horizon: usize, seed: u64) -> PyResult<Self> {
        let state = ZoomingState::with_default_metric(make_box(lower, upper)?, h, horizon).map_err(err)?;
        Ok(Self {
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Returns `(ball_id, action, score)`.
    fn select(&mut self) -> (usize, Vec<f64>, f64) {
        let s = self.state.select_arm(&mut self.rng);
        (s.ball_id, s.action, s.score)
    }

    fn update(&mut self, action: Vec<f64>, reward: f64) -> PyResult<()> {
        self.state.update(&action, reward).map_err(err)
    }

    #[getter]
    fn t(&self) -> usize {
        self.state.t()
    }

    /// Each ball as `(id, center, n, mean_reward, radius)`.
    fn balls(&self) -> Vec<(usize, Vec<f64>, usize, f64, f64)> {
        self.state
            .balls()
            .iter()
            .map(|b| (b.id, b.center.clone(), b.n, b.mean_reward, b.radius))
            .collect()
    }

    fn is_covered(&self, point: Vec<f64>) -> bool {
        self.state.is_covered(&point)
    }
}

/// Maximizes the Python callable `f(list[float]) -> float` over the box.
/// Returns `(best_point, best_value)`.
#[pyfunction]
#[pyo3(signature = (f, lower, upper, seed = 0, batch_size = 64, elite_count = 6, iterations = 6))]
fn cem_argmax(
    f: &Bound<'_, PyAny>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    seed: u64,
    batch_size: usize,
    elite_count: usize,
    iterations: usize,
) -> PyResult<(Vec<f64>, f64)> {
    let bx = make_box(lower, upper)?;
    let cfg = CemConfig {
        batch_size,
        elite_count,
        iterations,
        ..CemConfig::default()
    };
    let mut failure: Option<PyErr> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = core_cem(
        |x| {
            if failure.is_some() {
                return f64::NAN;
            }
            match f.call1((x.to_vec(),)).and_then(|v| v.extract::<f64>()) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        &bx,
        &cfg,
        &mut rng,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let r = result.map_err(err)?;
    Ok((r.best, r.value))
}

/// Kernel ridge model of R^f over context and fixture pose.
#[pyclass(name = "QModel")]
struct PyQModel {
    model: qmodel::QModel,
}

#[pymethods]
impl PyQModel {
    #[staticmethod]
    #[pyo3(signature = (contexts, actions, rewards, lower, upper, bandwidth = 0.3, ridge = 1e-6))]
    fn fit(
        contexts: Vec<Vec<f64>>,
        actions: Vec<Vec<f64>>,
        rewards: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        bandwidth: f64,
        ridge: f64,
    ) -> PyResult<Self> {
        if contexts.len() != actions.len() || actions.len() != rewards.len() {
            return Err(PyValueError::new_err("contexts, actions and rewards differ in length"));
        }
        let samples: Vec<QSample> = contexts
            .into_iter()
            .zip(actions)
            .zip(rewards)
            .map(|((context, action), reward)| QSample { context, action, reward })
            .collect();
        let model = qmodel::fit(&samples, &make_box(lower, upper)?, QModelConfig { bandwidth, ridge }).map_err(err)?;
        Ok(Self { model })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let model = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { model })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.model).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn predict(&self, context: Vec<f64>, action: Vec<f64>) -> PyResult<f64> {
        self.model.predict(&context, &action).map_err(err)
    }

    #[getter]
    fn train_rmse(&self) -> f64 {
        self.model.train_rmse
    }

    /// Rows of the `(x, y)` grid at orientation `theta`; row index is `y`.
    fn qmap(&self, context: Vec<f64>, theta: f64, resolution: usize) -> PyResult<Vec<Vec<f64>>> {
        let maps = self.model.export_qmap(&context, &[theta], resolution).map_err(err)?;
        Ok(maps[0].values.chunks(resolution).map(|r| r.to_vec()).collect())
    }

    /// CEM argmax over the pose box for a context: `(pose, value)`.
    #[pyo3(signature = (context, seed = 0))]
    fn best_pose(&self, context: Vec<f64>, seed: u64) -> PyResult<(Vec<f64>, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = test_time_policy(&self.model, &context, &CemConfig::default(), &mut rng).map_err(err)?;
        Ok((r.best, r.value))
    }
}

/// A surrogate task with a fixed scene and its own seeded RNG.
#[pyclass(name = "Env")]
struct PyEnv {
    env: SurrogateEnv,
    scene: Scene,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (task_name = "insertion", fixture = "none", seed = 0))]
    fn new(task_name: &str, fixture: &str, seed: u64) -> PyResult<Self> {
        let cfg = task(task_name)?;
        let scene = scene(&cfg, fixture)?;
        Ok(Self {
            env: SurrogateEnv::new(cfg),
            scene,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    fn reset(&mut self) -> PyResult<Vec<f64>> {
        self.env.reset(&self.scene, &mut self.rng).map_err(err)
    }

    /// Returns `(observation, reward, done, success)`.
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        self.env.step(&action, &self.scene, &mut self.rng).map_err(err)
    }
}

/// Trains an actor-critic single-threaded. Returns a dict with the
/// learning curve rows `(env_steps, success_rate, mean_return)` and the
/// policy dump as JSON.
#[pyfunction]
#[pyo3(signature = (task_name = "insertion", fixture = "optimal", total_steps = 40_000, seed = 0, eval_interval = 2_000, eval_episodes = 50))]
fn train<'py>(
    py: Python<'py>,
    task_name: &str,
    fixture: &str,
    total_steps: usize,
    seed: u64,
    eval_interval: usize,
    eval_episodes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let env = task(task_name)?;
    let scene = scene(&env, fixture)?;
    let cfg = TrainConfig {
        workers: 1,
        total_steps,
        seed,
        eval_interval,
        eval_episodes,
        ..TrainConfig::default()
    };
    let (policy, value, curve) = py.detach(|| train_policy(&env, &scene, &cfg)).map_err(err)?;
    let rows: Vec<(usize, f64, f64)> = curve
        .points
        .iter()
        .map(|p| (p.env_steps, p.success_rate, p.mean_return))
        .collect();
    let dump = serde_json::to_string(&PolicyDump::new(&policy, &value)).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = PyDict::new(py);
    out.set_item("curve", rows)?;
    out.set_item("final_success", curve.final_success())?;
    out.set_item("policy_json", dump)?;
    Ok(out)
}

/// Runs the outer loop with the task's default pose box. Returns a dict
/// with per-round `(pose, r_f)` records and the fitted Q-model.
#[pyfunction]
#[pyo3(signature = (task_name = "insertion", rounds = 60, inner_episodes = 200, seed = 0))]
fn outer_loop<'py>(
    py: Python<'py>,
    task_name: &str,
    rounds: usize,
    inner_episodes: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let env = task(task_name)?;
    let mut cfg = OuterConfig::for_env(&env);
    cfg.outer_rounds = rounds;
    cfg.inner_episodes_per_trial = inner_episodes;
    let result = py.detach(|| run_outer_loop(&env, &cfg, seed)).map_err(err)?;
    let records: Vec<(Vec<f64>, f64)> = result.records.iter().map(|r| (r.fixture_pose.clone(), r.r_f)).collect();
    let out = PyDict::new(py);
    out.set_item("records", records)?;
    out.set_item("model", Py::new(py, PyQModel { model: result.model })?)?;
    Ok(out)
}

/// Fixture displacement after `env_step` steps of the removal schedule.
#[pyfunction]
#[pyo3(signature = (env_step, displacement_per_stage = 0.01, steps_per_stage = 2000, max_stages = 8))]
fn fixture_offset(env_step: usize, displacement_per_stage: f64, steps_per_stage: usize, max_stages: usize) -> PyResult<[f64; 3]> {
    let s = RemovalSchedule {
        displacement_per_stage,
        steps_per_stage,
        max_stages,
        ..RemovalSchedule::default()
    };
    s.validate().map_err(err)?;
    Ok(s.fixture_offset(env_step))
}

#[pymodule]
fn scaffold_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyZooming>()?;
    m.add_class::<PyQModel>()?;
    m.add_class::<PyEnv>()?;
    m.add_function(wrap_pyfunction!(cem_argmax, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(outer_loop, m)?)?;
    m.add_function(wrap_pyfunction!(fixture_offset, m)?)?;
    Ok(())
}
