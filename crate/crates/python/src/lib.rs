//! Python bindings for `miolab-core`.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use miolab_core::error::Error;
use miolab_core::estimators;
use miolab_core::gauss_bench::{self, EstimatorChoice, GaussianTask};
use miolab_core::gradcheck;
use miolab_core::losses::{self, LossMethod, PairProbs};
use miolab_core::policy::{self, PolicyTable};
use miolab_core::runner::{self, ExperimentConfig, Suite};
use miolab_core::starvation::{self, CriticKind, StarvationInstance, StarvationProbe};
use miolab_core::toy_sim::{self, ScenarioConfig};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn method(name: &str) -> PyResult<LossMethod> {
    match name {
        "dpo" => Ok(LossMethod::Dpo),
        "mio" => Ok(LossMethod::Mio),
        other => Err(PyValueError::new_err(format!("unknown method {other:?}, expected \"dpo\" or \"mio\""))),
    }
}

fn pair(plus: f64, minus: f64, ref_plus: f64, ref_minus: f64) -> PyResult<PairProbs> {
    PairProbs::new(plus, minus, ref_plus, ref_minus).map_err(py_err)
}

/// Softmax policy over a prompt × response grid.
#[pyclass(name = "PolicyTable", module = "miolab", skip_from_py_object)]
#[derive(Clone)]
struct PyPolicyTable {
    inner: PolicyTable,
}

#[pymethods]
impl PyPolicyTable {
    #[staticmethod]
    fn uniform(num_prompts: usize, num_responses: usize) -> Self {
        Self { inner: PolicyTable::uniform(num_prompts, num_responses) }
    }

    #[staticmethod]
    fn from_logits(num_prompts: usize, num_responses: usize, logits: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: PolicyTable::from_logits(num_prompts, num_responses, logits).map_err(py_err)? })
    }

    /// Rows must each sum to one; zeros are allowed.
    #[staticmethod]
    fn from_probs(num_prompts: usize, num_responses: usize, probs: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: PolicyTable::from_probs(num_prompts, num_responses, &probs).map_err(py_err)? })
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.num_prompts(), self.inner.num_responses())
    }

    #[getter]
    fn frozen(&self) -> bool {
        self.inner.is_frozen()
    }

    fn freeze(&mut self) {
        self.inner.freeze();
    }

    fn prob(&self, x: usize, y: usize) -> PyResult<f64> {
        self.inner.prob(x, y).map_err(py_err)
    }

    fn log_prob(&self, x: usize, y: usize) -> PyResult<f64> {
        self.inner.log_prob(x, y).map_err(py_err)
    }

    fn prob_table(&self) -> Vec<Vec<f64>> {
        self.inner.prob_table()
    }

    fn log_prob_table(&self) -> Vec<Vec<f64>> {
        self.inner.log_prob_table()
    }

    /// Moves π(y*|x*) to `target`, rescaling the rest of the row.
    fn set_probability(&mut self, x_star: usize, y_star: usize, target: f64) -> PyResult<()> {
        self.inner.set_probability(x_star, y_star, target).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let (p, r) = self.shape();
        format!("PolicyTable({p}x{r}, frozen={})", self.inner.is_frozen())
    }
}

/// Loss for one pair given (π⁺, π⁻, π_ref⁺, π_ref⁻).
#[pyfunction]
#[pyo3(signature = (method_name, plus, minus, ref_plus, ref_minus, beta = 1.0))]
fn pair_loss(method_name: &str, plus: f64, minus: f64, ref_plus: f64, ref_minus: f64, beta: f64) -> PyResult<f64> {
    let p = pair(plus, minus, ref_plus, ref_minus)?;
    Ok(match method(method_name)? {
        LossMethod::Dpo => losses::dpo_loss_probs(&p, beta),
        LossMethod::Mio => losses::mio_loss_probs(&p, beta),
    })
}

/// Closed-form (∂L/∂π⁺, ∂L/∂π⁻).
#[pyfunction]
#[pyo3(signature = (method_name, plus, minus, ref_plus, ref_minus, beta = 1.0))]
fn pair_grads(
    method_name: &str,
    plus: f64,
    minus: f64,
    ref_plus: f64,
    ref_minus: f64,
    beta: f64,
) -> PyResult<(f64, f64)> {
    let p = pair(plus, minus, ref_plus, ref_minus)?;
    Ok(match method(method_name)? {
        LossMethod::Dpo => losses::dpo_analytic_grads(&p, beta),
        LossMethod::Mio => losses::mio_analytic_grads(&p, beta),
    })
}

/// Loss as a function of the two log-ratios.
#[pyfunction]
#[pyo3(signature = (method_name, lr_plus, lr_minus, beta = 1.0))]
fn log_ratio_loss(method_name: &str, lr_plus: f64, lr_minus: f64, beta: f64) -> PyResult<f64> {
    Ok(losses::loss_from_log_ratios(method(method_name)?, lr_plus, lr_minus, beta))
}

#[pyfunction]
#[pyo3(signature = (method_name, lr_plus, lr_minus, beta = 1.0))]
fn log_ratio_grads(method_name: &str, lr_plus: f64, lr_minus: f64, beta: f64) -> PyResult<(f64, f64)> {
    Ok(losses::log_ratio_grads(method(method_name)?, lr_plus, lr_minus, beta))
}

/// LR⁺ at which the MIO chosen gradient changes sign.
#[pyfunction]
#[pyo3(signature = (beta = 1.0, tolerance = 1e-12))]
fn mio_self_regulation_root(beta: f64, tolerance: f64) -> f64 {
    losses::mio_self_regulation_root(beta, tolerance)
}

/// Loss of a preference triple under `policy` against `reference`.
#[pyfunction]
#[pyo3(signature = (method_name, policy, reference, x, y_w, y_l, beta = 1.0))]
fn preference_loss(
    method_name: &str,
    policy: &PyPolicyTable,
    reference: &PyPolicyTable,
    x: usize,
    y_w: usize,
    y_l: usize,
    beta: f64,
) -> PyResult<f64> {
    let config = losses::LossConfig::new(method(method_name)?, beta).map_err(py_err)?;
    let triple = losses::PreferenceTriple::new(x, y_w, y_l).map_err(py_err)?;
    losses::preference_loss(&config, &triple, &policy.inner, &reference.inner).map_err(py_err)
}

#[pyfunction]
fn infonce_estimate(t_plus: Vec<f64>, t_minus: Vec<f64>) -> PyResult<f64> {
    estimators::infonce_estimate(&t_plus, &t_minus).map_err(py_err)
}

#[pyfunction]
fn mine_estimate(t_plus: Vec<f64>, t_minus: Vec<f64>) -> PyResult<f64> {
    estimators::mine_estimate(&t_plus, &t_minus).map_err(py_err)
}

#[pyfunction]
fn jsd_estimate(t_plus: Vec<f64>, t_minus: Vec<f64>) -> PyResult<f64> {
    estimators::jsd_estimate(&t_plus, &t_minus).map_err(py_err)
}

/// log E[V] − E[log V] for weighted values; returns (gap, coefficient of variation).
#[pyfunction]
fn jensen_gap(values: Vec<f64>, weights: Vec<f64>) -> PyResult<(f64, f64)> {
    let g = estimators::jensen_gap(&values, &weights).map_err(py_err)?;
    Ok((g.gap, g.coefficient_of_variation()))
}

/// Max deviation in the critic/reward identity on two policies.
#[pyfunction]
fn critic_reward_identity_error(policy: &PyPolicyTable, reference: &PyPolicyTable, alpha: f64, beta: f64) -> PyResult<f64> {
    policy::verify_critic_reward_identity(&policy.inner, &reference.inner, alpha, beta).map_err(py_err)
}

/// Energy reweighting of `base` by `reward` at temperature α.
#[pyfunction]
fn ebm_reweight(base: &PyPolicyTable, reward: Vec<Vec<f64>>, alpha: f64) -> PyResult<PyPolicyTable> {
    let out = policy::ebm_reweight(&base.inner, &reward, alpha).map_err(py_err)?;
    Ok(PyPolicyTable { inner: out.policy })
}

/// Trains one toy scenario; returns rows (step, chosen, rejected, unseen, loss).
#[pyfunction]
#[pyo3(signature = (scenario, method_name, seed = 0, steps = None, step_size = None, beta = None))]
fn run_toy(
    py: Python<'_>,
    scenario: u8,
    method_name: &str,
    seed: u64,
    steps: Option<usize>,
    step_size: Option<f64>,
    beta: Option<f64>,
) -> PyResult<Vec<(usize, f64, f64, f64, f64)>> {
    let mut config = ScenarioConfig::new(scenario, method(method_name)?, seed);
    if let Some(s) = steps {
        config.steps = s;
    }
    if let Some(s) = step_size {
        config.step_size = s;
    }
    if let Some(b) = beta {
        config.loss = losses::LossConfig::new(config.loss.method, b).map_err(py_err)?;
    }
    let log = py.detach(|| toy_sim::run_training(&config)).map_err(py_err)?;
    Ok(log
        .records
        .iter()
        .map(|r| (r.step, r.chosen_mean, r.rejected_mean, r.unseen_mean, r.loss))
        .collect())
}

#[pyfunction]
fn analytic_mi(rho: f64) -> PyResult<f64> {
    gauss_bench::analytic_mi(rho).map_err(py_err)
}

/// Trains a MINE or JSD critic on one correlated Gaussian; returns
/// (final estimate, gradient variance, estimate trace).
#[pyfunction]
#[pyo3(signature = (rho, kind, seed = 0, steps = None, batch = None, variance_window = None))]
fn train_gaussian_critic(
    py: Python<'_>,
    rho: f64,
    kind: &str,
    seed: u64,
    steps: Option<usize>,
    batch: Option<usize>,
    variance_window: Option<usize>,
) -> PyResult<(f64, f64, Vec<f64>)> {
    let kind = match kind {
        "mine" => EstimatorChoice::Mine,
        "jsd" => EstimatorChoice::Jsd,
        other => return Err(PyValueError::new_err(format!("unknown estimator {other:?}"))),
    };
    let mut task = GaussianTask::new(rho, seed);
    if let Some(s) = steps {
        task.steps = s;
    }
    if let Some(b) = batch {
        task.batch = b;
    }
    if let Some(w) = variance_window {
        task.variance_window = w;
    }
    let report = py.detach(|| gauss_bench::train_estimator(&task, kind)).map_err(py_err)?;
    Ok((report.final_estimate, report.gradient_variance, report.trace))
}

/// |∂I_DV/∂u| at each π*; rows (π*, measured, bound).
#[pyfunction]
#[pyo3(signature = (lipschitz, pi_stars, seed = 0))]
fn starvation_sweep(lipschitz: f64, pi_stars: Vec<f64>, seed: u64) -> PyResult<Vec<(f64, f64, f64)>> {
    let rows = starvation::starvation_sweep(lipschitz, &pi_stars, seed).map_err(py_err)?;
    Ok(rows.iter().map(|r| (r.pi_star, r.measured, r.bound)).collect())
}

/// Directional derivative of the DV objective along the probe logit,
/// by autodiff and by the two-term decomposition.
#[pyfunction]
#[pyo3(signature = (critic, x_star = 0, y_star = 0, zero_support = true, seed = 0, lipschitz = 1.0))]
fn dv_directional_derivative(
    critic: &str,
    x_star: usize,
    y_star: usize,
    zero_support: bool,
    seed: u64,
    lipschitz: f64,
) -> PyResult<(f64, f64)> {
    let critic = match critic {
        "theta-independent" => CriticKind::ThetaIndependent,
        "log-ratio" => CriticKind::LogRatio,
        "lipschitz" => CriticKind::Lipschitz(lipschitz),
        other => return Err(PyValueError::new_err(format!("unknown critic {other:?}"))),
    };
    let probe = StarvationProbe { x_star, y_star, critic, zero_support };
    let inst = StarvationInstance::random(probe, seed).map_err(py_err)?;
    let d = starvation::dv_directional_derivative(&inst).map_err(py_err)?;
    Ok((d.autodiff, d.decomposition()))
}

/// Every gradient-check suite; rows (suite, points, max relative error).
#[pyfunction]
#[pyo3(signature = (points = 1000, seed = 0))]
fn run_gradcheck(py: Python<'_>, points: usize, seed: u64) -> PyResult<Vec<(String, usize, f64)>> {
    let rows = py.detach(|| gradcheck::run_all(points, seed)).map_err(py_err)?;
    Ok(rows.into_iter().map(|r| (r.suite.to_string(), r.points, r.max_relative_error)).collect())
}

/// Runs a CLI suite into `out`; returns [(check, passed, detail)].
#[pyfunction]
#[pyo3(signature = (suite, out, config = None, seed = None))]
fn run_suite(
    py: Python<'_>,
    suite: &str,
    out: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
) -> PyResult<Vec<(String, bool, String)>> {
    let suite = match suite {
        "toy" => Suite::Toy,
        "gauss" => Suite::Gauss,
        "starvation" => Suite::Starvation,
        "gradcheck" => Suite::Gradcheck,
        "report" => Suite::Report,
        other => return Err(PyValueError::new_err(format!("unknown suite {other:?}"))),
    };
    let config = match config {
        Some(path) => ExperimentConfig::load(&path).map_err(py_err)?,
        None => ExperimentConfig::default(),
    };
    let manifest = py.detach(|| runner::run(suite, &config, seed, &out)).map_err(py_err)?;
    Ok(manifest.checks.into_iter().map(|c| (c.name, c.passed, c.detail)).collect())
}

#[pymodule]
fn miolab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolicyTable>()?;
    m.add_function(wrap_pyfunction!(pair_loss, m)?)?;
    m.add_function(wrap_pyfunction!(pair_grads, m)?)?;
    m.add_function(wrap_pyfunction!(log_ratio_loss, m)?)?;
    m.add_function(wrap_pyfunction!(log_ratio_grads, m)?)?;
    m.add_function(wrap_pyfunction!(mio_self_regulation_root, m)?)?;
    m.add_function(wrap_pyfunction!(preference_loss, m)?)?;
    m.add_function(wrap_pyfunction!(infonce_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(mine_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(jsd_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(jensen_gap, m)?)?;
    m.add_function(wrap_pyfunction!(critic_reward_identity_error, m)?)?;
    m.add_function(wrap_pyfunction!(ebm_reweight, m)?)?;
    m.add_function(wrap_pyfunction!(run_toy, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_mi, m)?)?;
    m.add_function(wrap_pyfunction!(train_gaussian_critic, m)?)?;
    m.add_function(wrap_pyfunction!(starvation_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(dv_directional_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(run_gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
