//! Toy preference dynamics: 4 prompts × 10 responses, diagonal preferences,
//! four initial-mass scenarios, DPO or MIO training against a frozen
//! reference.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{OptimizerMethod, OptimizerState};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::losses::{log_ratio_grads, loss_from_log_ratios, LossConfig, LossMethod, PreferenceTriple};
use crate::policy::{Parameterization, PolicyTable, ResponseCategories};
use crate::rng::named_rng;

pub const NUM_PROMPTS: usize = 4;
pub const NUM_RESPONSES: usize = 10;
/// Per-response mass of a "very small" category.
pub const SMALL_MASS: f64 = 1e-4;

/// Where rejected responses are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePool {
    RejectedSet,
    AllNonOptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// 1: chosen and rejected small; 2: rejected small; 3: chosen small; 4: neither.
    pub scenario: u8,
    /// Per-response initial mass of the chosen set; `None` shares the residual.
    pub chosen_mass: Option<f64>,
    /// Per-response initial mass of the rejected set; `None` shares the residual.
    pub rejected_mass: Option<f64>,
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub loss: LossConfig,
    pub step_size: f64,
    pub optimizer: OptimizerMethod,
    pub parameterization: Parameterization,
    pub negative_pool: NegativePool,
}

impl ScenarioConfig {
    pub fn new(scenario: u8, method: LossMethod, seed: u64) -> Self {
        let small = |yes: bool| yes.then_some(SMALL_MASS);
        let (chosen_small, rejected_small) = match scenario {
            1 => (true, true),
            2 => (false, true),
            3 => (true, false),
            _ => (false, false),
        };
        Self {
            scenario,
            chosen_mass: small(chosen_small),
            rejected_mass: small(rejected_small),
            seed,
            steps: 2000,
            batch: NUM_PROMPTS,
            loss: LossConfig { method, beta: 1.0 },
            step_size: 0.05,
            optimizer: OptimizerMethod::PlainGradient,
            parameterization: Parameterization::TabularLogits,
            negative_pool: NegativePool::RejectedSet,
        }
    }

    /// Per-response initial probabilities (identical for every prompt).
    pub fn initial_row(&self, cats: &ResponseCategories) -> Result<Vec<f64>> {
        let n = cats.num_responses();
        let mut row = vec![f64::NAN; n];
        let mut fixed_total = 0.0;
        let mut normal = Vec::new();
        for (set, mass) in [(&cats.chosen, self.chosen_mass), (&cats.rejected, self.rejected_mass), (&cats.unseen, None)] {
            for &y in set {
                match mass {
                    Some(m) if m > 0.0 && m.is_finite() => {
                        row[y] = m;
                        fixed_total += m;
                    }
                    Some(m) => return Err(Error::InvalidArgument(format!("initial mass must be positive, got {m}"))),
                    None => normal.push(y),
                }
            }
        }
        if fixed_total >= 1.0 || normal.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "fixed masses total {fixed_total} and leave no residual for the other responses"
            )));
        }
        let share = (1.0 - fixed_total) / normal.len() as f64;
        for y in normal {
            row[y] = share;
        }
        Ok(row)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.scenario) {
            return Err(Error::InvalidArgument(format!("scenario must be 1..=4, got {}", self.scenario)));
        }
        LossConfig::new(self.loss.method, self.loss.beta)?;
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be positive".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument("step size must be positive".into()));
        }
        Ok(())
    }

    fn stream(&self, what: &str) -> String {
        format!("toy/{what}/scenario-{}", self.scenario)
    }
}

/// Trainable policy at the scenario's initial distribution and a frozen copy.
pub fn build_scenario(config: &ScenarioConfig) -> Result<(PolicyTable, PolicyTable)> {
    config.validate()?;
    let cats = ResponseCategories::standard();
    let row = config.initial_row(&cats)?;
    let probs: Vec<f64> = (0..NUM_PROMPTS).flat_map(|_| row.iter().copied()).collect();
    let target = PolicyTable::from_probs(NUM_PROMPTS, NUM_RESPONSES, &probs)?;
    let policy = match config.parameterization {
        Parameterization::TabularLogits => target,
        Parameterization::Mlp => {
            let mut rng = named_rng(config.seed, &config.stream("init"));
            let mut net = PolicyTable::mlp(NUM_PROMPTS, NUM_RESPONSES, &mut rng);
            net.fit_to(&target, 2e-5, 50_000)?;
            net
        }
    };
    let reference = policy.frozen_copy();
    Ok((policy, reference))
}

/// `batch` triples, prompts taken round-robin; y_w is the prompt's diagonal
/// response and y_l is drawn uniformly from the negative pool.
pub fn make_batch<R: Rng + ?Sized>(
    cats: &ResponseCategories,
    num_prompts: usize,
    batch: usize,
    pool: NegativePool,
    rng: &mut R,
) -> Vec<PreferenceTriple> {
    (0..batch)
        .map(|i| {
            let x = i % num_prompts;
            let y_w = x;
            let y_l = match pool {
                NegativePool::RejectedSet => *cats.rejected.choose(rng).expect("non-empty rejected set"),
                NegativePool::AllNonOptimal => loop {
                    let y = rng.random_range(0..cats.num_responses());
                    if y != y_w {
                        break y;
                    }
                },
            };
            PreferenceTriple { x, y_w, y_l }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub chosen_mean: f64,
    pub rejected_mean: f64,
    pub unseen_mean: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub method: LossMethod,
    pub scenario: u8,
    pub seed: u64,
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectoryLog {
    pub fn initial(&self) -> Option<&TrajectoryRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    /// Largest |4·chosen + 4·rejected + 2·unseen − 1| over the log.
    pub fn max_normalization_error(&self, cats: &ResponseCategories) -> f64 {
        let (c, r, u) = (cats.chosen.len() as f64, cats.rejected.len() as f64, cats.unseen.len() as f64);
        self.records
            .iter()
            .map(|rec| (c * rec.chosen_mean + r * rec.rejected_mean + u * rec.unseen_mean - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn category_means(probs: &[Vec<f64>], cats: &ResponseCategories) -> (f64, f64, f64) {
    let mean = |set: &[usize]| -> f64 {
        if set.is_empty() {
            return 0.0;
        }
        probs.iter().map(|row| set.iter().map(|&y| row[y]).sum::<f64>() / set.len() as f64).sum::<f64>() / probs.len() as f64
    };
    (mean(&cats.chosen), mean(&cats.rejected), mean(&cats.unseen))
}

/// Batch-mean loss and its gradient with respect to the logits s(x, y).
fn batch_loss_and_logit_grad(
    policy_lp: &[Vec<f64>],
    reference_lp: &[Vec<f64>],
    batch: &[PreferenceTriple],
    loss: &LossConfig,
) -> (f64, Vec<Vec<f64>>) {
    let nr = policy_lp[0].len();
    let mut dlogits = vec![vec![0.0; nr]; policy_lp.len()];
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for t in batch {
        let lp = &policy_lp[t.x];
        let lr_plus = lp[t.y_w] - reference_lp[t.x][t.y_w];
        let lr_minus = lp[t.y_l] - reference_lp[t.x][t.y_l];
        total += loss_from_log_ratios(loss.method, lr_plus, lr_minus, loss.beta);
        let (g_plus, g_minus) = log_ratio_grads(loss.method, lr_plus, lr_minus, loss.beta);
        // ∂ log π(y|x)/∂s(x, y') = 1{y = y'} − π(y'|x)
        let row = &mut dlogits[t.x];
        for (y, d) in row.iter_mut().enumerate() {
            *d -= scale * (g_plus + g_minus) * lp[y].exp();
        }
        row[t.y_w] += scale * g_plus;
        row[t.y_l] += scale * g_minus;
    }
    (total * scale, dlogits)
}

/// Runs the configured training. Row t holds the policy after t updates
/// and the loss of the batch drawn at t; the last row's batch is evaluated
/// but not applied.
pub fn run_training(config: &ScenarioConfig) -> Result<TrajectoryLog> {
    let (mut policy, reference) = build_scenario(config)?;
    let cats = ResponseCategories::standard();
    let reference_lp = reference.log_prob_table();
    let mut rng = named_rng(config.seed, &config.stream("batches"));
    let mut optimizer = OptimizerState::new(config.optimizer, config.step_size);
    let mut records = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let lp = policy.log_prob_table();
        let probs: Vec<Vec<f64>> = lp.iter().map(|r| r.iter().map(|v| v.exp()).collect()).collect();
        let batch = make_batch(&cats, NUM_PROMPTS, config.batch, config.negative_pool, &mut rng);
        let (loss, dlogits) = batch_loss_and_logit_grad(&lp, &reference_lp, &batch, &config.loss);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("non-finite {} loss", config.loss.method.name()),
                snapshot: probs,
            });
        }
        let (chosen_mean, rejected_mean, unseen_mean) = category_means(&probs, &cats);
        records.push(TrajectoryRecord {
            step,
            chosen_mean,
            rejected_mean,
            unseen_mean,
            loss,
        });
        if step == config.steps {
            break;
        }
        let grads = policy.logit_grad_to_params(&dlogits)?;
        policy.apply_gradient(&mut optimizer, &grads)?;
    }
    Ok(TrajectoryLog {
        method: config.loss.method,
        scenario: config.scenario,
        seed: config.seed,
        records,
    })
}

/// CSV with `#` metadata lines and header `step,chosen_mean,rejected_mean,unseen_mean,loss`.
pub fn trajectory_csv(log: &TrajectoryLog) -> Result<Vec<u8>> {
    let mut out = format!(
        "# method={}\n# scenario={}\n# seed={}\n",
        log.method.name(),
        log.scenario,
        log.seed
    )
    .into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "chosen_mean", "rejected_mean", "unseen_mean", "loss"])?;
    for r in &log.records {
        w.write_record([
            r.step.to_string(),
            r.chosen_mean.to_string(),
            r.rejected_mean.to_string(),
            r.unseen_mean.to_string(),
            r.loss.to_string(),
        ])?;
    }
    out.extend(w.into_inner().map_err(|e| Error::Io(e.into_error()))?);
    Ok(out)
}

pub fn export_trajectory(log: &TrajectoryLog, path: &Path) -> Result<()> {
    write_atomic(path, &trajectory_csv(log)?)
}
