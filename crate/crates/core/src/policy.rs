//! Finite conditional policies π(y|x) on a prompt × response grid.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{log_softmax, log_sum_exp, Mlp, MlpShape, OptimizerState, Tape, Var};
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Hidden width of the perceptron policy.
pub const POLICY_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    TabularLogits,
    Mlp,
}

#[derive(Debug, Clone)]
enum Params {
    /// Row-major logits s(x, y). Entries may be −∞ for zero mass.
    Tabular(Vec<f64>),
    /// One-hot prompt in, one logit per response out.
    Mlp(Mlp),
}

#[derive(Debug, Clone)]
pub struct PolicyTable {
    num_prompts: usize,
    num_responses: usize,
    params: Params,
    frozen: bool,
}

impl PolicyTable {
    pub fn uniform(num_prompts: usize, num_responses: usize) -> Self {
        Self::from_logits(num_prompts, num_responses, vec![0.0; num_prompts * num_responses])
            .expect("shape")
    }

    /// Tabular policy with the given row-major logits.
    pub fn from_logits(num_prompts: usize, num_responses: usize, logits: Vec<f64>) -> Result<Self> {
        if num_prompts == 0 || num_responses == 0 {
            return Err(Error::InvalidArgument("empty prompt or response space".into()));
        }
        if logits.len() != num_prompts * num_responses {
            return Err(Error::ShapeMismatch {
                expected: num_prompts * num_responses,
                actual: logits.len(),
            });
        }
        if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::InvalidArgument("logits must be finite or −∞".into()));
        }
        for x in 0..num_prompts {
            let row = &logits[x * num_responses..(x + 1) * num_responses];
            if row.iter().all(|l| *l == f64::NEG_INFINITY) {
                return Err(Error::InvalidArgument(format!("prompt {x} has no mass")));
            }
        }
        Ok(Self {
            num_prompts,
            num_responses,
            params: Params::Tabular(logits),
            frozen: false,
        })
    }

    /// Tabular policy whose logits are log-probabilities of `probs`
    /// (row-major). Zero entries become −∞ logits and stay exactly zero.
    pub fn from_probs(num_prompts: usize, num_responses: usize, probs: &[f64]) -> Result<Self> {
        if probs.len() != num_prompts * num_responses {
            return Err(Error::ShapeMismatch {
                expected: num_prompts * num_responses,
                actual: probs.len(),
            });
        }
        for x in 0..num_prompts {
            let row = &probs[x * num_responses..(x + 1) * num_responses];
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidArgument(format!("prompt {x}: probabilities must be finite and ≥ 0")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("prompt {x}: probabilities sum to {total}")));
            }
        }
        Self::from_logits(num_prompts, num_responses, probs.iter().map(|p| p.ln()).collect())
    }

    /// Perceptron policy (one-hot prompt → 64 → 64 → responses, tanh).
    pub fn mlp<R: Rng + ?Sized>(num_prompts: usize, num_responses: usize, rng: &mut R) -> Self {
        let shape = MlpShape {
            input: num_prompts,
            hidden: POLICY_HIDDEN,
            output: num_responses,
        };
        Self {
            num_prompts,
            num_responses,
            params: Params::Mlp(Mlp::new(shape, rng)),
            frozen: false,
        }
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn num_responses(&self) -> usize {
        self.num_responses
    }

    pub fn parameterization(&self) -> Parameterization {
        match self.params {
            Params::Tabular(_) => Parameterization::TabularLogits,
            Params::Mlp(_) => Parameterization::Mlp,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Independent frozen copy (reference-model snapshot).
    pub fn frozen_copy(&self) -> Self {
        let mut copy = self.clone();
        copy.frozen = true;
        copy
    }

    /// Tabular snapshot of the current distribution (log-probabilities as logits).
    pub fn to_tabular(&self) -> Self {
        let logits = (0..self.num_prompts).flat_map(|x| self.log_probs_row(x)).collect();
        Self {
            num_prompts: self.num_prompts,
            num_responses: self.num_responses,
            params: Params::Tabular(logits),
            frozen: self.frozen,
        }
    }

    pub fn params(&self) -> &[f64] {
        match &self.params {
            Params::Tabular(l) => l,
            Params::Mlp(m) => m.params(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    pub fn params_mut(&mut self) -> Result<&mut [f64]> {
        if self.frozen {
            return Err(Error::FrozenPolicy);
        }
        Ok(match &mut self.params {
            Params::Tabular(l) => l,
            Params::Mlp(m) => m.params_mut(),
        })
    }

    /// One optimizer step on the policy parameters.
    pub fn apply_gradient(&mut self, optimizer: &mut OptimizerState, grads: &[f64]) -> Result<()> {
        let params = self.params_mut()?;
        optimizer.step(params, grads)
    }

    fn check_prompt(&self, x: usize) -> Result<()> {
        if x >= self.num_prompts {
            return Err(Error::IndexOutOfRange {
                what: "prompt",
                index: x,
                size: self.num_prompts,
            });
        }
        Ok(())
    }

    fn check_response(&self, y: usize) -> Result<()> {
        if y >= self.num_responses {
            return Err(Error::IndexOutOfRange {
                what: "response",
                index: y,
                size: self.num_responses,
            });
        }
        Ok(())
    }

    fn one_hot(&self, x: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_prompts];
        v[x] = 1.0;
        v
    }

    /// Logits s(x, ·). Panics if `x` is out of range.
    pub fn logits_row(&self, x: usize) -> Vec<f64> {
        assert!(x < self.num_prompts, "prompt out of range");
        match &self.params {
            Params::Tabular(l) => l[x * self.num_responses..(x + 1) * self.num_responses].to_vec(),
            Params::Mlp(m) => m.forward_one(&self.one_hot(x)),
        }
    }

    /// log π(· | x). Panics if `x` is out of range.
    pub fn log_probs_row(&self, x: usize) -> Vec<f64> {
        log_softmax(&self.logits_row(x))
    }

    /// log π(y|x) = s(x, y) − logsumexp_y' s(x, y').
    pub fn log_prob(&self, x: usize, y: usize) -> Result<f64> {
        self.check_prompt(x)?;
        self.check_response(y)?;
        Ok(self.log_probs_row(x)[y])
    }

    pub fn prob(&self, x: usize, y: usize) -> Result<f64> {
        Ok(self.log_prob(x, y)?.exp())
    }

    /// Full log-probability table, indexed `[x][y]`.
    pub fn log_prob_table(&self) -> Vec<Vec<f64>> {
        match &self.params {
            Params::Tabular(_) => (0..self.num_prompts).map(|x| self.log_probs_row(x)).collect(),
            Params::Mlp(m) => {
                let eye = Array2::eye(self.num_prompts);
                let out = m.forward_batch(eye.view()).output;
                out.rows().into_iter().map(|r| log_softmax(&r.to_vec())).collect()
            }
        }
    }

    /// Full probability table, indexed `[x][y]`.
    pub fn prob_table(&self) -> Vec<Vec<f64>> {
        self.log_prob_table()
            .into_iter()
            .map(|row| row.into_iter().map(f64::exp).collect())
            .collect()
    }

    /// ∂ log π(y|x) / ∂ s(x*, y*) in closed form.
    pub fn own_logit_derivative(&self, x_star: usize, y_star: usize, y: usize, x: usize) -> Result<f64> {
        if !matches!(self.params, Params::Tabular(_)) {
            return Err(Error::NotTabular);
        }
        self.check_prompt(x_star)?;
        self.check_prompt(x)?;
        self.check_response(y_star)?;
        self.check_response(y)?;
        if x != x_star {
            return Ok(0.0);
        }
        let p = self.prob(x_star, y_star)?;
        Ok(if y == y_star { 1.0 - p } else { -p })
    }

    /// Chains ∂L/∂s(x, y) (indexed `[x][y]`) back to the parameter vector.
    pub fn logit_grad_to_params(&self, dlogits: &[Vec<f64>]) -> Result<Vec<f64>> {
        if dlogits.len() != self.num_prompts || dlogits.iter().any(|r| r.len() != self.num_responses) {
            return Err(Error::ShapeMismatch {
                expected: self.num_prompts * self.num_responses,
                actual: dlogits.iter().map(Vec::len).sum(),
            });
        }
        Ok(match &self.params {
            Params::Tabular(_) => dlogits.concat(),
            Params::Mlp(m) => {
                let eye = Array2::eye(self.num_prompts);
                let trace = m.forward_batch(eye.view());
                let upstream = Array2::from_shape_vec(
                    (self.num_prompts, self.num_responses),
                    dlogits.concat(),
                )
                .expect("shape checked");
                m.backward_batch(&trace, upstream.view())
            }
        })
    }

    /// Records log π(·|x) for every prompt on `tape`, with `params` standing
    /// in for this policy's parameter vector.
    pub fn log_prob_table_tape<'t>(&self, tape: &'t Tape, params: &[Var<'t>]) -> Vec<Vec<Var<'t>>> {
        assert_eq!(params.len(), self.num_params(), "parameter count mismatch");
        (0..self.num_prompts)
            .map(|x| {
                let logits: Vec<Var<'t>> = match &self.params {
                    Params::Tabular(_) => {
                        params[x * self.num_responses..(x + 1) * self.num_responses].to_vec()
                    }
                    Params::Mlp(m) => {
                        let input: Vec<_> = self.one_hot(x).into_iter().map(|v| tape.constant(v)).collect();
                        m.forward_tape(tape, params, &input)
                    }
                };
                tape.log_softmax(&logits)
            })
            .collect()
    }

    /// Sets the tabular logit of (x*, y*) so that π(y*|x*) = `target`,
    /// keeping the other responses' relative odds.
    pub fn set_probability(&mut self, x_star: usize, y_star: usize, target: f64) -> Result<()> {
        self.check_prompt(x_star)?;
        self.check_response(y_star)?;
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::InvalidArgument(format!("target probability {target} not in (0, 1)")));
        }
        if self.frozen {
            return Err(Error::FrozenPolicy);
        }
        let nr = self.num_responses;
        let Params::Tabular(logits) = &mut self.params else {
            return Err(Error::NotTabular);
        };
        let row = &mut logits[x_star * nr..(x_star + 1) * nr];
        let others: Vec<f64> = row
            .iter()
            .enumerate()
            .filter(|(y, _)| *y != y_star)
            .map(|(_, l)| *l)
            .collect();
        let rest = log_sum_exp(&others);
        if rest == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument("no other response carries mass".into()));
        }
        row[y_star] = (target / (1.0 - target)).ln() + rest;
        Ok(())
    }

    /// Fits this (perceptron) policy to `target` by minimising
    /// Σ_x KL(target(·|x) ‖ π(·|x)) until every entry is within `tolerance`.
    pub fn fit_to(&mut self, target: &PolicyTable, tolerance: f64, max_steps: usize) -> Result<usize> {
        if (target.num_prompts, target.num_responses) != (self.num_prompts, self.num_responses) {
            return Err(Error::InvalidArgument("fit target has a different grid".into()));
        }
        let goal = target.prob_table();
        let mut opt = OptimizerState::adam(1e-2);
        for step in 0..max_steps {
            let probs = self.prob_table();
            let worst = probs
                .iter()
                .flatten()
                .zip(goal.iter().flatten())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            if worst < tolerance {
                return Ok(step);
            }
            // ∂KL/∂s(x, y) = π(y|x) − target(y|x)
            let dlogits: Vec<Vec<f64>> = probs
                .iter()
                .zip(&goal)
                .map(|(p, q)| p.iter().zip(q).map(|(a, b)| a - b).collect())
                .collect();
            let grads = self.logit_grad_to_params(&dlogits)?;
            self.apply_gradient(&mut opt, &grads)?;
        }
        Err(Error::InvalidArgument(format!(
            "policy fit did not reach tolerance {tolerance} in {max_steps} steps"
        )))
    }

    /// `prompt,response,probability` rows.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["prompt", "response", "probability"])?;
        for (x, row) in self.prob_table().iter().enumerate() {
            for (y, p) in row.iter().enumerate() {
                w.write_record([x.to_string(), y.to_string(), p.to_string()])?;
            }
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

/// Split of the response indices into chosen / rejected / unseen groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseCategories {
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub unseen: Vec<usize>,
}

impl ResponseCategories {
    /// First 4 chosen, next 4 rejected, last 2 unseen.
    pub fn standard() -> Self {
        Self {
            chosen: (0..4).collect(),
            rejected: (4..8).collect(),
            unseen: (8..10).collect(),
        }
    }

    pub fn new(chosen: Vec<usize>, rejected: Vec<usize>, unseen: Vec<usize>) -> Result<Self> {
        let cats = Self {
            chosen,
            rejected,
            unseen,
        };
        let mut all: Vec<usize> = cats.chosen.iter().chain(&cats.rejected).chain(&cats.unseen).copied().collect();
        all.sort_unstable();
        if all != (0..all.len()).collect::<Vec<_>>() || cats.chosen.is_empty() || cats.rejected.is_empty() {
            return Err(Error::InvalidArgument("categories must partition 0..n with non-empty chosen and rejected sets".into()));
        }
        Ok(cats)
    }

    pub fn num_responses(&self) -> usize {
        self.chosen.len() + self.rejected.len() + self.unseen.len()
    }
}

/// π_out(y|x) = π_base(y|x)·e^{α r(x,y)} / Z(x).
#[derive(Debug, Clone)]
pub struct EbmReweighting {
    pub policy: PolicyTable,
    pub log_normalizer: Vec<f64>,
}

impl EbmReweighting {
    pub fn normalizer(&self, x: usize) -> f64 {
        self.log_normalizer[x].exp()
    }
}

/// Energy reweighting of `base` by reward table `reward[x][y]` at temperature α.
/// Computed in log space, so zero-mass responses stay exactly zero.
pub fn ebm_reweight(base: &PolicyTable, reward: &[Vec<f64>], alpha: f64) -> Result<EbmReweighting> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature α must be positive, got {alpha}")));
    }
    let (np, nr) = (base.num_prompts(), base.num_responses());
    if reward.len() != np || reward.iter().any(|r| r.len() != nr) {
        return Err(Error::ShapeMismatch {
            expected: np * nr,
            actual: reward.iter().map(Vec::len).sum(),
        });
    }
    let base_lp = base.log_prob_table();
    let mut logits = Vec::with_capacity(np * nr);
    let mut log_normalizer = Vec::with_capacity(np);
    for x in 0..np {
        let mut row = Vec::with_capacity(nr);
        for y in 0..nr {
            let exponent = alpha * reward[x][y];
            if !exponent.is_finite() {
                return Err(Error::NonFiniteExponent { prompt: x, response: y });
            }
            row.push(base_lp[x][y] + exponent);
        }
        let log_z = log_sum_exp(&row);
        log_normalizer.push(log_z);
        logits.extend(row.into_iter().map(|v| v - log_z));
    }
    Ok(EbmReweighting {
        policy: PolicyTable::from_logits(np, nr, logits)?,
        log_normalizer,
    })
}

pub const FIXED_POINT_DAMPING: f64 = 0.5;
pub const FIXED_POINT_MAX_ITERATIONS: usize = 10_000;
pub const FIXED_POINT_TOLERANCE: f64 = 1e-12;
/// |1 − αβ| at or below this is treated as the degenerate αβ = 1 case.
pub const DEGENERATE_KAPPA: f64 = 1e-12;

/// Solves ℓ = κ·ℓ + log S for ℓ by damped iteration. For κ > 1 the
/// equivalent inverse map ℓ ← (ℓ − log S)/κ is iterated instead, since the
/// forward map is expansive there.
pub(crate) fn solve_log_normalizer(kappa: f64, log_s: f64, prompt: usize) -> Result<f64> {
    let map = |l: f64| {
        if kappa > 1.0 {
            (l - log_s) / kappa
        } else {
            kappa * l + log_s
        }
    };
    let mut ell = 0.0f64;
    let mut trace = Vec::new();
    for _ in 0..FIXED_POINT_MAX_ITERATIONS {
        let next = (1.0 - FIXED_POINT_DAMPING) * ell + FIXED_POINT_DAMPING * map(ell);
        let change = (next - ell).abs();
        if trace.len() == 16 {
            trace.remove(0);
        }
        trace.push(change);
        ell = next;
        if !ell.is_finite() {
            break;
        }
        if change < FIXED_POINT_TOLERANCE {
            return Ok(ell);
        }
    }
    Err(Error::FixedPointDiverged {
        prompt,
        iterations: FIXED_POINT_MAX_ITERATIONS,
        trace,
    })
}

/// Builds r = β[log(π_θ/π_ref) + log Z] with Z the self-consistent normaliser
/// of the reweighting, forms π_chosen from it, and returns
/// max |log(π_θ/π_chosen) − γ r| with γ = (1 − αβ)/β.
pub fn verify_critic_reward_identity(
    policy: &PolicyTable,
    reference: &PolicyTable,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("β must be positive, got {beta}")));
    }
    let (np, nr) = (policy.num_prompts(), policy.num_responses());
    if (reference.num_prompts(), reference.num_responses()) != (np, nr) {
        return Err(Error::InvalidArgument("policies live on different grids".into()));
    }
    let lp = policy.log_prob_table();
    let lr = reference.log_prob_table();
    for x in 0..np {
        for y in 0..nr {
            if !lp[x][y].is_finite() || !lr[x][y].is_finite() {
                return Err(Error::ZeroProbability { prompt: x, response: y });
            }
        }
    }
    let kappa = alpha * beta;
    let mut reward = vec![vec![0.0; nr]; np];
    for x in 0..np {
        let d: Vec<f64> = (0..nr).map(|y| lp[x][y] - lr[x][y]).collect();
        // Z = Σ π_ref e^{αr} = Z^{αβ}·S, S = Σ π_ref e^{αβ d}
        let log_s = log_sum_exp(&(0..nr).map(|y| lr[x][y] + kappa * d[y]).collect::<Vec<_>>());
        // At αβ = 1 the reweighting ignores log Z and γ = 0, so any value will do.
        let log_z = if (1.0 - kappa).abs() <= DEGENERATE_KAPPA { 0.0 } else { solve_log_normalizer(kappa, log_s, x)? };
        for y in 0..nr {
            reward[x][y] = beta * (d[y] + log_z);
        }
    }
    let chosen = ebm_reweight(reference, &reward, alpha)?.policy.log_prob_table();
    let gamma = if (1.0 - kappa).abs() <= DEGENERATE_KAPPA { 0.0 } else { (1.0 - kappa) / beta };
    let mut worst = 0.0f64;
    for x in 0..np {
        for y in 0..nr {
            let t = lp[x][y] - chosen[x][y];
            worst = worst.max((t - gamma * reward[x][y]).abs());
        }
    }
    Ok(worst)
}
