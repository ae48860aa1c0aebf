//! Mutual-information surrogates: DV bounds (exact and mixed-pool), the
//! Monte Carlo contrastive form and its pairwise reduction, the JSD
//! objective, the RLHF stage-2 objective and the Jensen-gap diagnostic.
//!
//! Discrete estimators take exact expectations over the whole grid.

use serde::{Deserialize, Serialize};

use crate::critics::Critic;
use crate::diffcore::{log_sum_exp, sigmoid, Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::policy::PolicyTable;

/// Scores above this are refused before exponentiation.
pub const SCORE_OVERFLOW_GUARD: f64 = 700.0;

/// How the log-partition term of a DV bound is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    /// Σ_x D(x)·log E_{y∼product(·|x)}[e^T]
    PerPrompt,
    /// log Σ_x D(x)·E_{y∼product(·|x)}[e^T]
    Pooled,
}

/// Positive and negative measures on the grid, both of the form
/// D(x)·q(y|x). The policy π_θ enters only through the critic.
#[derive(Debug, Clone)]
pub struct JointSpec {
    pub prompt_dist: Vec<f64>,
    /// Conditional of the positive (joint) measure, `[x][y]`.
    pub joint: Vec<Vec<f64>>,
    /// Conditional of the negative (product) measure, `[x][y]`.
    pub product: Vec<Vec<f64>>,
    pub partition: Partition,
}

fn check_distribution(rows: &[Vec<f64>], what: &str) -> Result<()> {
    for (x, row) in rows.iter().enumerate() {
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(format!("{what}: row {x} has an invalid probability")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("{what}: row {x} sums to {total}")));
        }
    }
    Ok(())
}

pub fn uniform_prompts(num_prompts: usize) -> Vec<f64> {
    vec![1.0 / num_prompts as f64; num_prompts]
}

impl JointSpec {
    pub fn new(
        prompt_dist: Vec<f64>,
        joint: Vec<Vec<f64>>,
        product: Vec<Vec<f64>>,
        partition: Partition,
    ) -> Result<Self> {
        check_distribution(std::slice::from_ref(&prompt_dist), "prompt distribution")?;
        check_distribution(&joint, "joint conditional")?;
        check_distribution(&product, "product conditional")?;
        let np = prompt_dist.len();
        let nr = joint.first().map_or(0, Vec::len);
        if joint.len() != np || product.len() != np || product.iter().chain(&joint).any(|r| r.len() != nr) {
            return Err(Error::InvalidArgument("joint spec shapes disagree".into()));
        }
        Ok(Self {
            prompt_dist,
            joint,
            product,
            partition,
        })
    }

    /// D·π_chosen against itself.
    pub fn exact(prompt_dist: Vec<f64>, chosen: &PolicyTable) -> Result<Self> {
        let c = chosen.prob_table();
        Self::new(prompt_dist, c.clone(), c, Partition::PerPrompt)
    }

    /// D·π_chosen against D·π̄ with π̄ = ½π_chosen + ½π_rejection.
    pub fn mixed(prompt_dist: Vec<f64>, chosen: &PolicyTable, rejection: &PolicyTable) -> Result<Self> {
        let c = chosen.prob_table();
        let mix = mixture(&c, &rejection.prob_table());
        Self::new(prompt_dist, c, mix, Partition::PerPrompt)
    }

    pub fn with_partition(mut self, partition: Partition) -> Self {
        self.partition = partition;
        self
    }

    pub fn num_prompts(&self) -> usize {
        self.prompt_dist.len()
    }

    pub fn num_responses(&self) -> usize {
        self.joint.first().map_or(0, Vec::len)
    }
}

/// ½a + ½b entrywise.
pub fn mixture(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(p, q)| 0.5 * p + 0.5 * q).collect())
        .collect()
}

/// E_joint[T] − log E_product[e^T] with the policy's log-probabilities
/// supplied as scalars (plain or recorded). Cells with zero weight under a
/// measure are skipped, so the critic is never asked to score them there.
pub fn dv_objective<S: Scalar, C: Critic>(spec: &JointSpec, critic: &C, log_policy: &[Vec<S>]) -> Result<S> {
    let seed = log_policy[0][0];
    let mut positive = Vec::new();
    let mut positive_w = Vec::new();
    let mut per_prompt = Vec::new();
    let mut per_prompt_w = Vec::new();
    let mut pooled = Vec::new();
    for x in 0..spec.num_prompts() {
        let d = spec.prompt_dist[x];
        if d == 0.0 {
            continue;
        }
        let mut row = Vec::new();
        for y in 0..spec.num_responses() {
            let (wj, wp) = (spec.joint[x][y], spec.product[x][y]);
            if wj == 0.0 && wp == 0.0 {
                continue;
            }
            let t = critic.score(x, y, log_policy[x][y])?;
            if wj > 0.0 {
                positive.push(t);
                positive_w.push(d * wj);
            }
            if wp > 0.0 {
                if t.value() > SCORE_OVERFLOW_GUARD {
                    return Err(Error::ScoreOverflow {
                        prompt: x,
                        response: y,
                        score: t.value(),
                    });
                }
                row.push(t + wp.ln());
            }
        }
        if row.is_empty() {
            continue;
        }
        match spec.partition {
            Partition::PerPrompt => {
                per_prompt.push(S::log_sum_exp(&row));
                per_prompt_w.push(d);
            }
            Partition::Pooled => pooled.extend(row.into_iter().map(|v| v + d.ln())),
        }
    }
    let first = if positive.is_empty() {
        seed.lift(0.0)
    } else {
        S::weighted_sum(&positive_w, &positive)
    };
    let second = match spec.partition {
        Partition::PerPrompt if !per_prompt.is_empty() => S::weighted_sum(&per_prompt_w, &per_prompt),
        Partition::Pooled if !pooled.is_empty() => S::log_sum_exp(&pooled),
        _ => return Err(Error::InvalidArgument("product measure has no mass".into())),
    };
    Ok(first - second)
}

/// Exact DV bound E_joint[T] − log E_product[e^T] for `policy`.
pub fn dv_bound_exact<C: Critic>(spec: &JointSpec, critic: &C, policy: &PolicyTable) -> Result<f64> {
    dv_objective(spec, critic, &policy.log_prob_table())
}

/// Mixed-pool bound E_{D·π_chosen}[T] − log E_{D·π̄}[e^T] − log 2.
pub fn dv_bound_mixed<C: Critic>(
    prompt_dist: &[f64],
    policy: &PolicyTable,
    chosen: &PolicyTable,
    rejection: &PolicyTable,
    critic: &C,
) -> Result<f64> {
    let spec = JointSpec::mixed(prompt_dist.to_vec(), chosen, rejection)?;
    Ok(dv_objective(&spec, critic, &policy.log_prob_table())? - std::f64::consts::LN_2)
}

/// Recorded version of [`dv_bound_mixed`] over the policy's parameters.
pub fn dv_bound_mixed_tape<'t, C: Critic>(
    tape: &'t Tape,
    params: &[Var<'t>],
    spec: &JointSpec,
    policy: &PolicyTable,
    critic: &C,
) -> Result<Var<'t>> {
    let table = policy.log_prob_table_tape(tape, params);
    Ok(dv_objective(spec, critic, &table)? - std::f64::consts::LN_2)
}

/// Sample counts of the Monte Carlo estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McCounts {
    pub m: usize,
    pub n: usize,
}

impl McCounts {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptySamples("chosen samples (M)"));
        }
        if n == 0 {
            return Err(Error::EmptySamples("rejection samples (N)"));
        }
        Ok(Self { m, n })
    }
}

/// Mean over chosen samples of T⁺ᵢ − log((1/M)Σe^{T⁺} + (1/N)Σe^{T⁻}).
pub fn infonce_estimate(t_plus: &[f64], t_minus: &[f64]) -> Result<f64> {
    let counts = McCounts::new(t_plus.len(), t_minus.len())?;
    let (ln_m, ln_n) = ((counts.m as f64).ln(), (counts.n as f64).ln());
    let pool: Vec<f64> = t_plus
        .iter()
        .map(|t| t - ln_m)
        .chain(t_minus.iter().map(|t| t - ln_n))
        .collect();
    let log_denominator = log_sum_exp(&pool);
    Ok(t_plus.iter().map(|t| t - log_denominator).sum::<f64>() / counts.m as f64)
}

/// Sampled DV bound (1/M)ΣT⁺ − log((1/N)Σe^{T⁻}).
pub fn mine_estimate(t_plus: &[f64], t_minus: &[f64]) -> Result<f64> {
    let counts = McCounts::new(t_plus.len(), t_minus.len())?;
    let mean = t_plus.iter().sum::<f64>() / counts.m as f64;
    Ok(mean - log_sum_exp(t_minus) + (counts.n as f64).ln())
}

/// log σ(T⁺ − T⁻).
pub fn pairwise_logsigmoid<S: Scalar>(t_plus: S, t_minus: S) -> S {
    (t_plus - t_minus).log_sigmoid()
}

/// Outcome of the Î⁺ / Î⁻ gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum Opposition {
    /// ∇Δ = 0; no direction to compare.
    Stationary,
    Opposed {
        inner_product: f64,
        /// σ(Δ)/σ(−Δ)
        factor: f64,
        /// max |∇Î⁻ + factor·∇Î⁺|
        residual: f64,
        grad_plus: Vec<f64>,
        grad_minus: Vec<f64>,
    },
}

/// A pair of scores (T⁺, T⁻) recorded as functions of shared parameters.
pub trait ScorePair {
    fn scores<'t>(&self, tape: &'t Tape, params: &[Var<'t>]) -> (Var<'t>, Var<'t>);
}

impl<F> ScorePair for F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> (Var<'t>, Var<'t>),
{
    fn scores<'t>(&self, tape: &'t Tape, params: &[Var<'t>]) -> (Var<'t>, Var<'t>) {
        self(tape, params)
    }
}

/// Differentiates Î⁺ = log σ(Δ) and Î⁻ = log σ(−Δ), Δ = T⁺ − T⁻, with
/// respect to the shared parameters and compares the two gradients.
pub fn gradient_opposition_check<P: ScorePair>(pair: &P, params: &[f64]) -> Result<Opposition> {
    let grad_of = |sign: f64| -> Result<(Vec<f64>, f64)> {
        let tape = Tape::new();
        let p = tape.params(params);
        let (tp, tm) = pair.scores(&tape, &p);
        let delta = tp - tm;
        let root = (delta * sign).log_sigmoid();
        Ok((tape.backward(root)?, delta.value()))
    };
    let (grad_plus, delta) = grad_of(1.0)?;
    let (grad_minus, _) = grad_of(-1.0)?;
    if grad_plus.iter().all(|g| *g == 0.0) {
        return Ok(Opposition::Stationary);
    }
    let inner_product = grad_plus.iter().zip(&grad_minus).map(|(a, b)| a * b).sum();
    let factor = sigmoid(delta) / sigmoid(-delta);
    let residual = grad_plus
        .iter()
        .zip(&grad_minus)
        .map(|(p, m)| (m + factor * p).abs())
        .fold(0.0, f64::max);
    Ok(Opposition::Opposed {
        inner_product,
        factor,
        residual,
        grad_plus,
        grad_minus,
    })
}

/// Sampled JSD objective
/// −(1/M)Σ sp(−T⁺) − ½[(1/M)Σ sp(T⁺) + (1/N)Σ sp(T⁻)].
pub fn jsd_estimate<S: Scalar>(t_plus: &[S], t_minus: &[S]) -> Result<S> {
    let counts = McCounts::new(t_plus.len(), t_minus.len())?;
    let (m, n) = (counts.m as f64, counts.n as f64);
    let neg_sp: Vec<S> = t_plus.iter().map(|t| (-*t).softplus()).collect();
    let pos_sp: Vec<S> = t_plus.iter().map(|t| t.softplus()).collect();
    let rej_sp: Vec<S> = t_minus.iter().map(|t| t.softplus()).collect();
    Ok(-(S::sum(&neg_sp) / m) - (S::sum(&pos_sp) / m + S::sum(&rej_sp) / n) * 0.5)
}

/// Exact-expectation JSD objective over the grid:
/// −E_{D·π_c}[sp(−T)] − ½(E_{D·π_c}[sp(T)] + E_{D·π_r}[sp(T)]).
pub fn jsd_objective_exact<S: Scalar, C: Critic>(
    prompt_dist: &[f64],
    chosen: &[Vec<f64>],
    rejection: &[Vec<f64>],
    critic: &C,
    log_policy: &[Vec<S>],
) -> Result<S> {
    let mut terms = Vec::new();
    let mut weights = Vec::new();
    for (x, &d) in prompt_dist.iter().enumerate() {
        for y in 0..chosen[x].len() {
            let (wc, wr) = (d * chosen[x][y], d * rejection[x][y]);
            if wc == 0.0 && wr == 0.0 {
                continue;
            }
            let t = critic.score(x, y, log_policy[x][y])?;
            if wc > 0.0 {
                terms.push((-t).softplus());
                weights.push(-wc);
                terms.push(t.softplus());
                weights.push(-0.5 * wc);
            }
            if wr > 0.0 {
                terms.push(t.softplus());
                weights.push(-0.5 * wr);
            }
        }
    }
    if terms.is_empty() {
        return Err(Error::InvalidArgument("measures have no mass".into()));
    }
    Ok(S::weighted_sum(&weights, &terms))
}

/// Sampled-or-exact JSD entry point on policy tables.
pub fn jsd_objective<C: Critic>(
    prompt_dist: &[f64],
    policy: &PolicyTable,
    chosen: &PolicyTable,
    rejection: &PolicyTable,
    critic: &C,
) -> Result<f64> {
    jsd_objective_exact(
        prompt_dist,
        &chosen.prob_table(),
        &rejection.prob_table(),
        critic,
        &policy.log_prob_table(),
    )
}

/// E_{D·π_θ}[T] − Σ_x D(x)·KL(π_θ(·|x) ‖ π_ref(·|x)).
pub fn rlhf_stage2_objective<C: Critic>(
    prompt_dist: &[f64],
    policy: &PolicyTable,
    reference: &PolicyTable,
    critic: &C,
) -> Result<f64> {
    let lp = policy.log_prob_table();
    let lr = reference.log_prob_table();
    let mut reward = 0.0;
    let mut kl = 0.0;
    for (x, &d) in prompt_dist.iter().enumerate() {
        for y in 0..lp[x].len() {
            let p = lp[x][y].exp();
            if p == 0.0 {
                continue;
            }
            if lr[x][y] == f64::NEG_INFINITY {
                return Err(Error::SupportMismatch { prompt: x, response: y });
            }
            reward += d * p * critic.score(x, y, lp[x][y])?;
            kl += d * p * (lp[x][y] - lr[x][y]);
        }
    }
    Ok(reward - kl)
}

/// Result of [`jensen_gap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JensenGap {
    /// log E[f] − E[log f]
    pub gap: f64,
    /// σ²/(2μ²)
    pub taylor_bound: f64,
    pub mean: f64,
    pub variance: f64,
}

impl JensenGap {
    pub fn coefficient_of_variation(&self) -> f64 {
        self.variance.sqrt() / self.mean
    }
}

/// Jensen gap of a positive variable `values` under probability `weights`.
pub fn jensen_gap(values: &[f64], weights: &[f64]) -> Result<JensenGap> {
    if values.is_empty() {
        return Err(Error::EmptySamples("jensen gap values"));
    }
    if values.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            expected: values.len(),
            actual: weights.len(),
        });
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositiveSample { index, value });
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0) || !(total > 0.0) {
        return Err(Error::InvalidArgument("weights must be nonnegative with positive total".into()));
    }
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let variance = values.iter().zip(weights).map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / total;
    let mean_log = values.iter().zip(weights).map(|(v, w)| w * v.ln()).sum::<f64>() / total;
    Ok(JensenGap {
        gap: mean.ln() - mean_log,
        taylor_bound: variance / (2.0 * mean * mean),
        mean,
        variance,
    })
}

/// Equal-weight [`jensen_gap`] over samples.
pub fn jensen_gap_samples(samples: &[f64]) -> Result<JensenGap> {
    jensen_gap(samples, &vec![1.0; samples.len()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    DvExact,
    DvMixed,
    Infonce,
    Pairwise,
    Jsd,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::DvExact => "dv_exact",
            EstimatorKind::DvMixed => "dv_mixed",
            EstimatorKind::Infonce => "infonce",
            EstimatorKind::Pairwise => "pairwise",
            EstimatorKind::Jsd => "jsd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub kind: EstimatorKind,
    pub value: f64,
    pub step: usize,
    pub critic: String,
}

/// CSV with header `kind,step,value,critic,seed`.
pub fn estimate_reports_csv(reports: &[EstimateReport], seed: u64) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "step", "value", "critic", "seed"])?;
    for r in reports {
        if !r.value.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite {} estimate at step {}", r.kind.name(), r.step)));
        }
        w.write_record([
            r.kind.name().to_string(),
            r.step.to_string(),
            r.value.to_string(),
            r.critic.clone(),
            seed.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
