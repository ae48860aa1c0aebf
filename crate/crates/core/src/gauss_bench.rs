//! Bivariate Gaussian MI benchmark: MINE and JSD critics trained with one
//! shuffled negative per positive, plus first-layer gradient variance.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{sigmoid, Mlp, MlpShape, OptimizerState};
use crate::error::{Error, Result};
use crate::estimators::{jsd_estimate, mine_estimate};
use crate::io::write_atomic;
use crate::rng::named_rng;

pub const CRITIC_WIDTH: usize = 64;
pub const DIVERGENCE_LIMIT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    Mine,
    Jsd,
}

impl EstimatorChoice {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mine => "mine",
            Self::Jsd => "jsd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianTask {
    pub rho: f64,
    pub batch: usize,
    pub negatives: usize,
    pub steps: usize,
    pub step_size: f64,
    pub variance_window: usize,
    pub seed: u64,
}

impl GaussianTask {
    pub fn new(rho: f64, seed: u64) -> Self {
        Self {
            rho,
            batch: 256,
            negatives: 1,
            steps: 5000,
            step_size: 1e-3,
            variance_window: 500,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        if self.batch < 2 {
            return Err(Error::InvalidArgument("batch must hold at least 2 pairs".into()));
        }
        if self.negatives == 0 {
            return Err(Error::InvalidArgument("need at least one negative per positive".into()));
        }
        if self.variance_window == 0 || self.variance_window > self.steps {
            return Err(Error::InvalidArgument(format!(
                "variance window {} must lie in 1..={}",
                self.variance_window, self.steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub kind: EstimatorChoice,
    pub rho: f64,
    pub seed: u64,
    pub trace: Vec<f64>,
    /// Mean of the estimate trace over the variance window.
    pub final_estimate: f64,
    /// Per-entry variance of the first-layer weight gradient across the
    /// window, averaged over entries.
    pub gradient_variance: f64,
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("correlation must satisfy |rho| < 1, got {rho}")))
    }
}

/// −½ ln(1 − ρ²) in nats.
pub fn analytic_mi(rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(-0.5 * (-rho * rho).ln_1p())
}

pub fn sample_pairs<R: Rng + ?Sized>(rho: f64, n: usize, rng: &mut R) -> Result<Vec<(f64, f64)>> {
    check_rho(rho)?;
    let noise_scale = (1.0 - rho * rho).sqrt();
    Ok((0..n)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            (x, rho * x + noise_scale * z)
        })
        .collect())
}

/// Pairs each x with the y of a shuffled partner, `k` shuffles per batch.
pub fn shuffled_negatives<R: Rng + ?Sized>(pairs: &[(f64, f64)], k: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(pairs.len() * k);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..k {
        order.shuffle(rng);
        out.extend(pairs.iter().zip(&order).map(|(p, &j)| (p.0, pairs[j].1)));
    }
    out
}

/// Sample Pearson correlation.
pub fn sample_correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Objective value and ∂objective/∂T for positives then negatives.
fn objective_and_grad(kind: EstimatorChoice, t_plus: &[f64], t_minus: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (m, n) = (t_plus.len() as f64, t_minus.len() as f64);
    let mut grad = Vec::with_capacity(t_plus.len() + t_minus.len());
    let value = match kind {
        EstimatorChoice::Mine => {
            let value = mine_estimate(t_plus, t_minus)?;
            let top = t_minus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = t_minus.iter().map(|t| (t - top).exp()).collect();
            let total: f64 = weights.iter().sum();
            grad.extend(t_plus.iter().map(|_| 1.0 / m));
            grad.extend(weights.iter().map(|w| -w / total));
            value
        }
        EstimatorChoice::Jsd => {
            let value = jsd_estimate(t_plus, t_minus)?;
            grad.extend(t_plus.iter().map(|&t| (sigmoid(-t) - 0.5 * sigmoid(t)) / m));
            grad.extend(t_minus.iter().map(|&t| -0.5 * sigmoid(t) / n));
            value
        }
    };
    Ok((value, grad))
}

fn to_input(pos: &[(f64, f64)], neg: &[(f64, f64)]) -> Array2<f64> {
    let rows = pos.len() + neg.len();
    Array2::from_shape_fn((rows, 2), |(i, j)| {
        let p = if i < pos.len() { pos[i] } else { neg[i - pos.len()] };
        if j == 0 {
            p.0
        } else {
            p.1
        }
    })
}

pub fn critic_shape() -> MlpShape {
    MlpShape {
        input: 2,
        hidden: CRITIC_WIDTH,
        output: 1,
    }
}

/// Trains one critic by gradient ascent on the estimator's objective.
/// Data and initial weights depend on (seed, ρ) only, so both estimators
/// see the same batches and start from the same network.
pub fn train_estimator(task: &GaussianTask, kind: EstimatorChoice) -> Result<VarianceReport> {
    task.validate()?;
    let mut data_rng = named_rng(task.seed, &format!("gauss/data/rho={}", task.rho));
    let mut init_rng = named_rng(task.seed, "gauss/init");
    let mut net = Mlp::new(critic_shape(), &mut init_rng);
    let first_layer = critic_shape().first_layer_weights();
    let mut optimizer = OptimizerState::adam(task.step_size);
    let mut trace = Vec::with_capacity(task.steps);
    let window_start = task.steps - task.variance_window;
    let mut grad_sum = vec![0.0; first_layer.len()];
    let mut grad_sq_sum = vec![0.0; first_layer.len()];

    for step in 0..task.steps {
        let pos = sample_pairs(task.rho, task.batch, &mut data_rng)?;
        let neg = shuffled_negatives(&pos, task.negatives, &mut data_rng);
        let forward = net.forward_batch(to_input(&pos, &neg).view());
        let scores = forward.output.column(0).to_vec();
        let (t_plus, t_minus) = scores.split_at(pos.len());
        let (value, d_value) = objective_and_grad(kind, t_plus, t_minus)?;
        trace.push(value);
        if !value.is_finite() || value.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                step,
                reason: format!("{} estimate {value} left ±{DIVERGENCE_LIMIT}", kind.name()),
                snapshot: vec![trace],
            });
        }
        let upstream: Vec<f64> = d_value.iter().map(|g| -g).collect();
        let upstream = ArrayView2::from_shape((upstream.len(), 1), &upstream).expect("column vector");
        let grads = net.backward_batch(&forward, upstream);
        if step >= window_start {
            for ((s, q), g) in grad_sum.iter_mut().zip(&mut grad_sq_sum).zip(&grads[first_layer.clone()]) {
                *s += g;
                *q += g * g;
            }
        }
        optimizer.step(net.params_mut(), &grads)?;
    }

    let w = task.variance_window as f64;
    let gradient_variance = grad_sum
        .iter()
        .zip(&grad_sq_sum)
        .map(|(s, q)| ((q - s * s / w) / (w - 1.0).max(1.0)).max(0.0))
        .sum::<f64>()
        / grad_sum.len() as f64;
    let final_estimate = trace[window_start..].iter().sum::<f64>() / w;
    Ok(VarianceReport {
        kind,
        rho: task.rho,
        seed: task.seed,
        trace,
        final_estimate,
        gradient_variance,
    })
}

/// Full factorial ρ × kind × seed. Rows come back in that nesting order.
pub fn variance_sweep(
    template: &GaussianTask,
    rhos: &[f64],
    kinds: &[EstimatorChoice],
    seeds: &[u64],
) -> Result<Vec<VarianceReport>> {
    for &rho in rhos {
        check_rho(rho)?;
    }
    let cells: Vec<(f64, EstimatorChoice, u64)> = rhos
        .iter()
        .flat_map(|&r| kinds.iter().flat_map(move |&k| seeds.iter().map(move |&s| (r, k, s))))
        .collect();
    cells
        .into_par_iter()
        .map(|(rho, kind, seed)| {
            let task = GaussianTask {
                rho,
                seed,
                ..template.clone()
            };
            train_estimator(&task, kind)
        })
        .collect()
}

/// Header `rho,kind,seed,final_estimate,gradient_variance`.
pub fn sweep_csv(reports: &[VarianceReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rho", "kind", "seed", "final_estimate", "gradient_variance"])?;
    for r in reports {
        w.write_record([
            r.rho.to_string(),
            r.kind.name().to_string(),
            r.seed.to_string(),
            r.final_estimate.to_string(),
            r.gradient_variance.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Header `step,estimate`.
pub fn trace_csv(report: &VarianceReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "estimate"])?;
    for (i, v) in report.trace.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn export_sweep(reports: &[VarianceReport], path: &Path) -> Result<()> {
    write_atomic(path, &sweep_csv(reports)?)
}
