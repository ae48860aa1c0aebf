//! Gradient-oracle suites: every hand-derived or tape gradient against
//! central finite differences.

use rand::Rng;

use crate::diffcore::{finite_difference_gradient, max_relative_error, Tape};
use crate::error::Result;
use crate::estimators::{dv_bound_mixed_tape, dv_objective, jsd_estimate, JointSpec};
use crate::losses::{
    dpo_analytic_grads, dpo_loss_probs, log_ratio_grads, loss_from_log_ratios, mio_analytic_grads, mio_loss_probs,
    LossMethod, PairProbs,
};
use crate::policy::PolicyTable;
use crate::rng::named_rng;
use crate::starvation::{CriticKind, StarvationInstance, StarvationProbe};

pub const FD_STEP: f64 = 1e-6;
/// Denominator floor for relative errors: entries smaller than this are
/// compared in absolute terms, below the ~1e-10 noise of the differences.
pub const ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub suite: &'static str,
    pub points: usize,
    pub max_relative_error: f64,
}

fn random_pair<R: Rng + ?Sized>(rng: &mut R) -> (PairProbs, f64) {
    let mut p = || rng.random_range(0.02..0.98);
    let probs = PairProbs::new(p(), p(), p(), p()).expect("strictly positive");
    (probs, rng.random_range(0.1..2.0))
}

/// Analytic ∂ℓ/∂π⁺, ∂ℓ/∂π⁻ against finite differences taken in relative
/// coordinates π(1 + u), so small probabilities get proportionate steps.
pub fn probability_grad_suite(method: LossMethod, points: usize, seed: u64) -> Result<GradcheckRow> {
    let mut rng = named_rng(seed, &format!("gradcheck/probability/{}", method.name()));
    let mut worst = 0.0f64;
    for _ in 0..points {
        let (p, beta) = random_pair(&mut rng);
        let loss = |u: &[f64]| {
            let q = PairProbs {
                plus: p.plus * (1.0 + u[0]),
                minus: p.minus * (1.0 + u[1]),
                ..p
            };
            match method {
                LossMethod::Dpo => dpo_loss_probs(&q, beta),
                LossMethod::Mio => mio_loss_probs(&q, beta),
            }
        };
        let fd = finite_difference_gradient(loss, &[0.0, 0.0], FD_STEP)?;
        let (gp, gm) = match method {
            LossMethod::Dpo => dpo_analytic_grads(&p, beta),
            LossMethod::Mio => mio_analytic_grads(&p, beta),
        };
        let analytic = [gp * p.plus, gm * p.minus];
        worst = worst.max(max_relative_error(&analytic, &fd, ERROR_FLOOR));
    }
    Ok(GradcheckRow {
        suite: match method {
            LossMethod::Dpo => "dpo-probability",
            LossMethod::Mio => "mio-probability",
        },
        points,
        max_relative_error: worst,
    })
}

/// Closed-form ∂ℓ/∂LR± and the tape gradient of the same loss, both
/// against finite differences.
pub fn log_ratio_grad_suite(method: LossMethod, points: usize, seed: u64) -> Result<GradcheckRow> {
    let mut rng = named_rng(seed, &format!("gradcheck/log-ratio/{}", method.name()));
    let mut worst = 0.0f64;
    for _ in 0..points {
        let lr = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let beta = rng.random_range(0.1..2.0);
        let fd = finite_difference_gradient(|v: &[f64]| loss_from_log_ratios(method, v[0], v[1], beta), &lr, FD_STEP)?;
        let (gp, gm) = log_ratio_grads(method, lr[0], lr[1], beta);
        worst = worst.max(max_relative_error(&[gp, gm], &fd, ERROR_FLOOR));
        let tape = Tape::new();
        let vars = tape.params(&lr);
        let root = loss_from_log_ratios(method, vars[0], vars[1], beta);
        worst = worst.max(max_relative_error(&tape.backward(root)?, &fd, ERROR_FLOOR));
    }
    Ok(GradcheckRow {
        suite: match method {
            LossMethod::Dpo => "dpo-log-ratio",
            LossMethod::Mio => "mio-log-ratio",
        },
        points,
        max_relative_error: worst,
    })
}

/// Tape gradient of the exact DV bound with respect to tabular logits.
pub fn dv_tape_suite(points: usize, seed: u64) -> Result<GradcheckRow> {
    let mut worst = 0.0f64;
    let kinds = [CriticKind::ThetaIndependent, CriticKind::LogRatio, CriticKind::Lipschitz(1.5)];
    for i in 0..points {
        let probe = StarvationProbe {
            x_star: 1,
            y_star: 3,
            critic: kinds[i % kinds.len()],
            zero_support: i % 2 == 0,
        };
        let inst = StarvationInstance::random(probe, seed.wrapping_add(i as u64))?;
        let spec = JointSpec::mixed(inst.prompt_dist.clone(), &inst.chosen, &inst.rejection)?.with_partition(inst.partition);
        let (np, nr) = (inst.policy.num_prompts(), inst.policy.num_responses());
        let f = |logits: &[f64]| {
            let policy = PolicyTable::from_logits(np, nr, logits.to_vec()).expect("finite logits");
            dv_objective(&spec, &inst.critic, &policy.log_prob_table()).expect("finite objective")
        };
        let fd = finite_difference_gradient(f, inst.policy.params(), FD_STEP)?;
        let tape = Tape::new();
        let params = tape.params(inst.policy.params());
        let root = dv_bound_mixed_tape(&tape, &params, &spec, &inst.policy, &inst.critic)?;
        worst = worst.max(max_relative_error(&tape.backward(root)?, &fd, ERROR_FLOOR));
    }
    Ok(GradcheckRow {
        suite: "dv-exact-tape",
        points,
        max_relative_error: worst,
    })
}

/// Tape gradient of the sampled JSD objective with respect to the scores.
pub fn jsd_tape_suite(points: usize, seed: u64) -> Result<GradcheckRow> {
    let mut rng = named_rng(seed, "gradcheck/jsd");
    let mut worst = 0.0f64;
    for _ in 0..points {
        let m = rng.random_range(1..6);
        let n = rng.random_range(1..6);
        let scores: Vec<f64> = (0..m + n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let f = |v: &[f64]| jsd_estimate(&v[..m], &v[m..]).expect("non-empty");
        let fd = finite_difference_gradient(f, &scores, FD_STEP)?;
        let tape = Tape::new();
        let vars = tape.params(&scores);
        let root = jsd_estimate(&vars[..m], &vars[m..])?;
        worst = worst.max(max_relative_error(&tape.backward(root)?, &fd, ERROR_FLOOR));
        debug_assert_eq!(root.value(), f(&scores));
    }
    Ok(GradcheckRow {
        suite: "jsd-tape",
        points,
        max_relative_error: worst,
    })
}

/// Every suite; `points` applies to the cheap scalar suites, the grid
/// suite runs `points / 20` instances.
pub fn run_all(points: usize, seed: u64) -> Result<Vec<GradcheckRow>> {
    Ok(vec![
        probability_grad_suite(LossMethod::Dpo, points, seed)?,
        probability_grad_suite(LossMethod::Mio, points, seed)?,
        log_ratio_grad_suite(LossMethod::Dpo, points, seed)?,
        log_ratio_grad_suite(LossMethod::Mio, points, seed)?,
        jsd_tape_suite(points, seed)?,
        dv_tape_suite((points / 20).max(1), seed)?,
    ])
}
