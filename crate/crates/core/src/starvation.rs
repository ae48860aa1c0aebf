//! Directional derivative of the mixed-pool DV objective along the own
//! logit u = s(x*, y*) of a target response, computed by autodiff and by
//! the explicit (A) − (B) decomposition
//!
//!   ∂I/∂u = E_joint[∂T/∂u] − E_product[e^T ∂T/∂u] / E_product[e^T].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critics::{AnyCritic, Critic, LipschitzCritic, LogRatioCritic, NeuralCritic};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::estimators::{dv_bound_mixed_tape, uniform_prompts, JointSpec, Partition};
use crate::policy::{ebm_reweight, PolicyTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticKind {
    ThetaIndependent,
    LogRatio,
    Lipschitz(f64),
}

impl CriticKind {
    pub fn name(&self) -> String {
        match self {
            CriticKind::ThetaIndependent => "theta-independent".into(),
            CriticKind::LogRatio => "log-ratio".into(),
            CriticKind::Lipschitz(l) => format!("lipschitz({l})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarvationProbe {
    pub x_star: usize,
    pub y_star: usize,
    pub critic: CriticKind,
    /// Demand π_chosen(y*|x*) = π_rejection(y*|x*) = 0.
    pub zero_support: bool,
}

/// A complete discrete instance around one probe.
#[derive(Debug, Clone)]
pub struct StarvationInstance {
    pub probe: StarvationProbe,
    pub prompt_dist: Vec<f64>,
    pub policy: PolicyTable,
    pub reference: PolicyTable,
    pub chosen: PolicyTable,
    pub rejection: PolicyTable,
    pub critic: AnyCritic,
    pub partition: Partition,
}

pub const GRID_PROMPTS: usize = 4;
pub const GRID_RESPONSES: usize = 10;

impl StarvationInstance {
    /// Random 4×10 instance. With `zero_support` the reference has exactly
    /// zero mass at (x*, y*), which the energy reweighting carries over to
    /// π_chosen and π_rejection.
    pub fn random(probe: StarvationProbe, seed: u64) -> Result<Self> {
        let (np, nr) = (GRID_PROMPTS, GRID_RESPONSES);
        if probe.x_star >= np || probe.y_star >= nr {
            return Err(Error::InvalidArgument("probe target outside the 4×10 grid".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probs: Vec<f64> = (0..np * nr).map(|_| rng.random_range(0.2..1.0)).collect();
        if probe.zero_support {
            probs[probe.x_star * nr + probe.y_star] = 0.0;
        }
        for row in probs.chunks_mut(nr) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        let reference = PolicyTable::from_probs(np, nr, &probs)?.frozen_copy();
        let reward: Vec<Vec<f64>> = (0..np).map(|_| (0..nr).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let negated: Vec<Vec<f64>> = reward.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let chosen = ebm_reweight(&reference, &reward, 1.0)?.policy;
        let rejection = ebm_reweight(&reference, &negated, 1.0)?.policy;
        let logits = (0..np * nr).map(|_| rng.random_range(-1.5..1.5)).collect();
        let policy = PolicyTable::from_logits(np, nr, logits)?;
        let critic = match probe.critic {
            CriticKind::ThetaIndependent => AnyCritic::Neural(NeuralCritic::discrete(np, nr, &mut rng)),
            CriticKind::LogRatio => AnyCritic::LogRatio(LogRatioCritic::new(&chosen, 1.0, rng.random_range(-1.0..1.0))),
            CriticKind::Lipschitz(l) => {
                let base = (0..np).map(|_| (0..nr).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                AnyCritic::Lipschitz(LipschitzCritic::new(base, l)?)
            }
        };
        Ok(Self {
            probe,
            prompt_dist: uniform_prompts(np),
            policy,
            reference,
            chosen,
            rejection,
            critic,
            partition: Partition::PerPrompt,
        })
    }

    fn spec(&self) -> Result<JointSpec> {
        Ok(JointSpec::mixed(self.prompt_dist.clone(), &self.chosen, &self.rejection)?.with_partition(self.partition))
    }
}

/// Both routes to ∂I_DV/∂u.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalDerivative {
    pub autodiff: f64,
    /// E_joint[∂T/∂u]
    pub term_a: f64,
    /// E_product[e^T ∂T/∂u] / E_product[e^T]
    pub term_b: f64,
}

impl DirectionalDerivative {
    pub fn decomposition(&self) -> f64 {
        self.term_a - self.term_b
    }
}

fn check_support(inst: &StarvationInstance) -> Result<()> {
    let StarvationProbe {
        x_star,
        y_star,
        zero_support,
        ..
    } = inst.probe;
    if zero_support {
        for table in [&inst.chosen, &inst.rejection] {
            if table.prob(x_star, y_star)? != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "support condition violated: mass at ({x_star}, {y_star})"
                )));
            }
        }
    }
    Ok(())
}

/// ∂I_DV/∂u by autodiff through the mixed bound and by the (A) − (B) sum.
pub fn dv_directional_derivative(inst: &StarvationInstance) -> Result<DirectionalDerivative> {
    check_support(inst)?;
    let policy = &inst.policy;
    let (x_star, y_star) = (inst.probe.x_star, inst.probe.y_star);
    let nr = policy.num_responses();
    if policy.parameterization() != crate::policy::Parameterization::TabularLogits {
        return Err(Error::NotTabular);
    }
    let spec = inst.spec()?;

    let tape = Tape::new();
    let params = tape.params(policy.params());
    let root = dv_bound_mixed_tape(&tape, &params, &spec, policy, &inst.critic)?;
    let autodiff = tape.backward(root)?[x_star * nr + y_star];

    let lp = policy.log_prob_table();
    let mut term_a = 0.0;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut per_prompt_b = 0.0;
    for x in 0..policy.num_prompts() {
        let d = spec.prompt_dist[x];
        let (mut row_num, mut row_den) = (0.0, 0.0);
        for y in 0..nr {
            let (wj, wp) = (spec.joint[x][y], spec.product[x][y]);
            if wj == 0.0 && wp == 0.0 {
                continue;
            }
            let t = inst.critic.score(x, y, lp[x][y])?;
            let dt_du = inst.critic.slope(x, y, lp[x][y])? * policy.own_logit_derivative(x_star, y_star, y, x)?;
            term_a += d * wj * dt_du;
            row_num += wp * t.exp() * dt_du;
            row_den += wp * t.exp();
        }
        if row_den > 0.0 {
            per_prompt_b += d * row_num / row_den;
        }
        num += d * row_num;
        den += d * row_den;
    }
    let term_b = match inst.partition {
        Partition::PerPrompt => per_prompt_b,
        Partition::Pooled => num / den,
    };
    Ok(DirectionalDerivative {
        autodiff,
        term_a,
        term_b,
    })
}

/// ⟨∇_θ I_DV, ∇_θ log π_θ(y*|x*)⟩ in two readings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerProduct {
    /// Own-logit reading: ∂I/∂u · ∂log π(y*|x*)/∂u = ∂I/∂u · (1 − π*).
    pub own_logit: f64,
    /// Full inner product over every tabular logit.
    pub full: f64,
}

pub fn inner_product_form(inst: &StarvationInstance) -> Result<InnerProduct> {
    check_support(inst)?;
    let policy = &inst.policy;
    let (x_star, y_star) = (inst.probe.x_star, inst.probe.y_star);
    let nr = policy.num_responses();
    let spec = inst.spec()?;
    let tape = Tape::new();
    let params = tape.params(policy.params());
    let root = dv_bound_mixed_tape(&tape, &params, &spec, policy, &inst.critic)?;
    let grad = tape.backward(root)?;
    let mut full = 0.0;
    for y in 0..nr {
        full += grad[x_star * nr + y] * policy.own_logit_derivative(x_star, y, y_star, x_star)?;
    }
    let own = policy.own_logit_derivative(x_star, y_star, y_star, x_star)?;
    Ok(InnerProduct {
        own_logit: grad[x_star * nr + y_star] * own,
        full,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub pi_star: f64,
    pub measured: f64,
    pub bound: f64,
    pub lipschitz: f64,
}

/// Moves π_θ(y*|x*) through `pi_stars` on one instance with a Lipschitz
/// critic and records |∂I/∂u| next to the bound 2Lπ*.
pub fn starvation_sweep(lipschitz: f64, pi_stars: &[f64], seed: u64) -> Result<Vec<SweepRow>> {
    let probe = StarvationProbe {
        x_star: 1,
        y_star: 3,
        critic: CriticKind::Lipschitz(lipschitz),
        zero_support: true,
    };
    let mut inst = StarvationInstance::random(probe, seed)?;
    pi_stars
        .iter()
        .map(|&pi| {
            if !(pi > 0.0 && pi < 0.5) {
                return Err(Error::InvalidArgument(format!("π* = {pi} outside (0, 0.5)")));
            }
            inst.policy.set_probability(probe.x_star, probe.y_star, pi)?;
            let d = dv_directional_derivative(&inst)?;
            Ok(SweepRow {
                pi_star: pi,
                measured: d.autodiff.abs(),
                bound: 2.0 * lipschitz * pi,
                lipschitz,
            })
        })
        .collect()
}

/// Least-squares slope of log(measured) against log(π*).
pub fn loglog_slope(rows: &[SweepRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.pi_star.ln(), r.measured.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// CSV with header `pi_star,measured,bound,L,critic_kind,seed`.
pub fn sweep_csv(rows: &[SweepRow], seed: u64) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pi_star", "measured", "bound", "L", "critic_kind", "seed"])?;
    for r in rows {
        w.write_record([
            r.pi_star.to_string(),
            r.measured.to_string(),
            r.bound.to_string(),
            r.lipschitz.to_string(),
            CriticKind::Lipschitz(r.lipschitz).name(),
            seed.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
