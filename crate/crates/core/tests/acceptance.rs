//! Acceptance criteria 1–13. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 4 and 10 are known to fail; the reasons are in the README
//! ("Known failing criteria"). The process exits nonzero only if some other
//! criterion fails, or if a known failure starts passing and the docs go
//! stale.

use std::f64::consts::LN_2;
use std::time::{Duration, Instant};

use rand::Rng;

use miolab_core::diffcore::{sigmoid, Tape, Var};
use miolab_core::estimators::{
    gradient_opposition_check, infonce_estimate, jensen_gap, jsd_estimate, pairwise_logsigmoid, Opposition, ScorePair,
};
use miolab_core::gauss_bench::{analytic_mi, variance_sweep, EstimatorChoice, GaussianTask};
use miolab_core::gradcheck::probability_grad_suite;
use miolab_core::losses::{
    dpo_analytic_grads, dpo_loss_probs, mio_analytic_grads, mio_loss_probs, mio_self_regulation_root, LossMethod,
    PairProbs,
};
use miolab_core::policy::{verify_critic_reward_identity, PolicyTable};
use miolab_core::rng::named_rng;
use miolab_core::runner::{self, ExperimentConfig, Suite};
use miolab_core::starvation::{
    dv_directional_derivative, loglog_slope, starvation_sweep, CriticKind, StarvationInstance, StarvationProbe,
};
use miolab_core::toy_sim::{run_training, ScenarioConfig};

const KNOWN_RED: [u32; 2] = [4, 10];

struct Outcome {
    id: u32,
    passed: bool,
    detail: String,
}

fn timed<F: FnOnce() -> (bool, String)>(budget: Option<Duration>, f: F) -> (bool, String) {
    let start = Instant::now();
    let (ok, detail) = f();
    let took = start.elapsed();
    match budget {
        Some(limit) => (ok && took < limit, format!("{detail}; {:.1}s (budget {}s)", took.as_secs_f64(), limit.as_secs())),
        None => (ok, detail),
    }
}

fn criterion_1() -> (bool, String) {
    timed(Some(Duration::from_secs(10)), || {
        let dpo = probability_grad_suite(LossMethod::Dpo, 1000, 1).unwrap();
        let mio = probability_grad_suite(LossMethod::Mio, 1000, 1).unwrap();
        let worst = dpo.max_relative_error.max(mio.max_relative_error);
        (
            worst < 1e-6,
            format!(
                "max rel err dpo {:.2e}, mio {:.2e} over 1000 points each",
                dpo.max_relative_error, mio.max_relative_error
            ),
        )
    })
}

fn criterion_2() -> (bool, String) {
    let mut rng = named_rng(2, "acceptance/ratio-law");
    let mut worst = 0.0f64;
    for i in 0..2000 {
        let lo = if i % 2 == 0 { 1e-8 } else { 1e-3 };
        let p = PairProbs::new(
            rng.random_range(lo..1.0),
            rng.random_range(lo..1.0),
            rng.random_range(1e-3..1.0),
            rng.random_range(1e-3..1.0),
        )
        .unwrap();
        let beta = rng.random_range(0.05..3.0);
        let (gp, gm) = dpo_analytic_grads(&p, beta);
        let ratio = gm.abs() / gp.abs();
        let want = p.plus / p.minus;
        worst = worst.max((ratio - want).abs() / want);
    }
    (worst < 1e-10, format!("max rel deviation from π⁺/π⁻ {worst:.2e} over 2000 points"))
}

fn criterion_3() -> (bool, String) {
    let mut ok = true;
    let mut worst = 0.0f64;
    for beta in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let root = mio_self_regulation_root(beta, 1e-13);
        worst = worst.max((beta * root - LN_2).abs());
        let ref_plus = 0.3;
        let at = |lr: f64| {
            let p = PairProbs::new(ref_plus * lr.exp(), 0.2, ref_plus, 0.2).unwrap();
            mio_analytic_grads(&p, beta).0
        };
        // σ⁺ below 2/3 pushes π⁺ up (negative loss gradient), above pulls it down.
        ok &= at(root - 1e-6) < 0.0 && at(root + 1e-6) > 0.0;
        ok &= (sigmoid(beta * root) - 2.0 / 3.0).abs() < 1e-9;
    }
    (ok && worst < 1e-8, format!("max |β·LR⁺ − ln 2| {worst:.2e}; sign flips at σ⁺ = 2/3: {ok}"))
}

fn criterion_4() -> (bool, String) {
    let beta = 1.0;
    let p = PairProbs::new(0.5, 1e-8, 0.5, 0.5).unwrap();
    let (dp, dm) = dpo_analytic_grads(&p, beta);
    let a = dp.abs() < 1e-6;
    let b = dm > 1e7;
    let mut c = true;
    for plus in [0.5, 1e-2, 1e-4, 1e-6] {
        let q = PairProbs::new(plus, 1e-8, 0.5, 0.5).unwrap();
        let g = mio_analytic_grads(&q, beta).0.abs();
        c &= g > 0.0 && g <= beta / plus;
    }
    (
        a && b && c,
        format!(
            "(a) |∂π⁺ℓ_DPO| = {:.2e} < 1e-6: {a}; (b) ∂π⁻ℓ_DPO = {dm:.3} > 1e7: {b} (capped at π⁺/π⁻·|∂π⁺| = {:.3}); (c) MIO |∂π⁺ℓ| in (0, β/π⁺]: {c}",
            dp.abs(),
            p.plus / p.minus * dp.abs()
        ),
    )
}

fn criterion_5() -> (bool, String) {
    let mut rng = named_rng(5, "acceptance/reductions");
    let (mut e78, mut e1415) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (tp, tm) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        e78 = e78.max((infonce_estimate(&[tp], &[tm]).unwrap() - pairwise_logsigmoid(tp, tm)).abs());
        let p = PairProbs::new(
            rng.random_range(0.01..1.0),
            rng.random_range(0.01..1.0),
            rng.random_range(0.01..1.0),
            rng.random_range(0.01..1.0),
        )
        .unwrap();
        let beta = rng.random_range(0.1..2.0);
        let (lp, lm) = p.log_ratios();
        let jsd = jsd_estimate(&[beta * lp], &[beta * lm]).unwrap();
        e1415 = e1415.max((jsd + mio_loss_probs(&p, beta)).abs());
    }
    let same = PairProbs::new(0.3, 0.2, 0.3, 0.2).unwrap();
    let mio0 = (mio_loss_probs(&same, 1.0) - 2.0 * LN_2).abs();
    let dpo0 = (dpo_loss_probs(&same, 1.0) - LN_2).abs();
    (
        e78 < 1e-14 && e1415 < 1e-12 && mio0 < 1e-12 && dpo0 < 1e-12,
        format!("InfoNCE vs pairwise {e78:.1e}; JSD vs −MIO {e1415:.1e}; MIO(ref) − 2ln2 {mio0:.1e}; DPO(ref) − ln2 {dpo0:.1e}"),
    )
}

struct LogRatioPair {
    y_plus: usize,
    y_minus: usize,
    beta: f64,
    offsets: (f64, f64),
}

impl ScorePair for LogRatioPair {
    fn scores<'t>(&self, tape: &'t Tape, params: &[Var<'t>]) -> (Var<'t>, Var<'t>) {
        let lp = tape.log_softmax(params);
        (lp[self.y_plus] * self.beta - self.offsets.0, lp[self.y_minus] * self.beta - self.offsets.1)
    }
}

fn criterion_6() -> (bool, String) {
    let mut rng = named_rng(6, "acceptance/opposition");
    let (mut ok, mut worst) = (true, 0.0f64);
    for _ in 0..100 {
        let logits: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y_plus = rng.random_range(0..10);
        let y_minus = (y_plus + rng.random_range(1..10)) % 10;
        let pair = LogRatioPair {
            y_plus,
            y_minus,
            beta: rng.random_range(0.1..2.0),
            offsets: (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        };
        match gradient_opposition_check(&pair, &logits).unwrap() {
            Opposition::Opposed {
                inner_product,
                factor,
                grad_plus,
                grad_minus,
                ..
            } => {
                ok &= inner_product < 0.0;
                for (gp, gm) in grad_plus.iter().zip(&grad_minus) {
                    worst = worst.max((gm + factor * gp).abs());
                }
            }
            Opposition::Stationary => ok = false,
        }
    }
    (ok && worst < 1e-10, format!("all inner products negative: {ok}; max |∇Î⁻ + factor·∇Î⁺| {worst:.1e}"))
}

fn criterion_7() -> (bool, String) {
    let mut rng = named_rng(7, "acceptance/identity");
    let mut worst = 0.0f64;
    let mut degenerate = 0.0f64;
    let table = |rng: &mut rand_chacha::ChaCha8Rng| {
        PolicyTable::from_logits(4, 10, (0..40).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    };
    for i in 0..100 {
        let policy = table(&mut rng);
        let reference = table(&mut rng);
        let beta = rng.random_range(0.2..2.0);
        // κ = αβ is kept 0.1 away from 1 outside the degenerate cases: the
        // damped iteration contracts at rate 1 − |1 − κ|/2 and needs that gap
        // to converge within its iteration budget.
        let kappa = match i % 10 {
            0 => 1.0,
            k if k % 2 == 0 => rng.random_range(0.1..0.9),
            _ => rng.random_range(1.1..1.8),
        };
        let alpha = kappa / beta;
        let r = verify_critic_reward_identity(&policy, &reference, alpha, beta).unwrap();
        worst = worst.max(r);
        if i % 10 == 0 {
            degenerate = degenerate.max(r);
        }
    }
    (worst < 1e-9, format!("max residual {worst:.1e} over 100 instances (αβ = 1 cases: {degenerate:.1e})"))
}

fn criterion_8() -> (bool, String) {
    let (mut indep, mut ratio) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        for (critic, zero_support) in [(CriticKind::ThetaIndependent, seed % 2 == 0), (CriticKind::LogRatio, true)] {
            let probe = StarvationProbe {
                x_star: 1,
                y_star: 3,
                critic,
                zero_support,
            };
            let d = dv_directional_derivative(&StarvationInstance::random(probe, seed).unwrap()).unwrap();
            let slot = if critic == CriticKind::LogRatio { &mut ratio } else { &mut indep };
            *slot = slot.max(d.autodiff.abs()).max(d.decomposition().abs());
        }
    }
    (
        indep <= 1e-12 && ratio <= 1e-10,
        format!("max |∂I/∂u| θ-independent {indep:.1e}, log-ratio {ratio:.1e} over 100 seeds"),
    )
}

fn criterion_9() -> (bool, String) {
    timed(Some(Duration::from_secs(30)), || {
        let pis = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        let mut ok = true;
        let mut details = Vec::new();
        for l in [0.5, 1.0, 2.0] {
            for seed in 0..5 {
                let rows = starvation_sweep(l, &pis, seed).unwrap();
                let slope = loglog_slope(&rows);
                ok &= rows.iter().all(|r| r.measured <= 2.0 * l * r.pi_star + 1e-10) && slope >= 0.9;
                if seed == 0 {
                    details.push(format!("L={l} slope {slope:.3}"));
                }
            }
        }
        (ok, format!("bound held in every row: {ok}; {}", details.join(", ")))
    })
}

fn criterion_10() -> (bool, String) {
    timed(Some(Duration::from_secs(120)), || {
        let (mut a, mut b, mut c, mut d) = (true, true, true, true);
        let mut worst_mio: f64 = f64::INFINITY;
        let mut best_dpo: f64 = 0.0;
        for seed in 0..5 {
            for scenario in 1..=4u8 {
                for method in [LossMethod::Dpo, LossMethod::Mio] {
                    let log = run_training(&ScenarioConfig::new(scenario, method, seed)).unwrap();
                    let (first, last) = (log.initial().unwrap(), log.last().unwrap());
                    let ratio = last.chosen_mean / first.chosen_mean;
                    match method {
                        LossMethod::Mio => {
                            a &= ratio >= 0.95;
                            worst_mio = worst_mio.min(ratio);
                        }
                        LossMethod::Dpo if scenario <= 2 => {
                            b &= ratio < 1.0;
                            best_dpo = best_dpo.max(ratio);
                        }
                        LossMethod::Dpo => {}
                    }
                    c &= last.rejected_mean < first.rejected_mean;
                    d &= log.max_normalization_error(&miolab_core::policy::ResponseCategories::standard()) <= 1e-10;
                }
            }
        }
        (
            a && b && c && d,
            format!(
                "(a) MIO chosen kept ≥ 0.95: {a} (min ratio {worst_mio:.3}); (b) DPO chosen falls in 1–2: {b} (max ratio {best_dpo:.3}); (c) rejected falls: {c}; (d) normalized: {d}"
            ),
        )
    })
}

fn criterion_11() -> (bool, String) {
    timed(Some(Duration::from_secs(600)), || {
        let rhos = [0.0, 0.3, 0.5, 0.7];
        let seeds = [0, 1, 2, 3, 4];
        let reports = variance_sweep(
            &GaussianTask::new(0.0, 0),
            &rhos,
            &[EstimatorChoice::Mine, EstimatorChoice::Jsd],
            &seeds,
        )
        .unwrap();
        let mut ok = true;
        let mut parts = Vec::new();
        for &rho in &rhos {
            let pick = |k: EstimatorChoice| reports.iter().filter(move |r| r.rho == rho && r.kind == k);
            let mine: Vec<_> = pick(EstimatorChoice::Mine).collect();
            let avg = mine.iter().map(|r| r.final_estimate).sum::<f64>() / mine.len() as f64;
            let mi = analytic_mi(rho).unwrap();
            ok &= (avg - mi).abs() <= 0.15;
            let wins = pick(EstimatorChoice::Jsd)
                .zip(&mine)
                .filter(|(j, m)| j.gradient_variance < m.gradient_variance)
                .count();
            if rho >= 0.5 {
                ok &= wins >= 4;
            }
            parts.push(format!("ρ={rho}: MINE {avg:.3} vs {mi:.3}, JSD lower var {wins}/5"));
        }
        (ok, parts.join("; "))
    })
}

fn criterion_12() -> (bool, String) {
    let mut rng = named_rng(12, "acceptance/jensen");
    let mut min_gap = f64::INFINITY;
    let mut ok = true;
    let mut tested = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..20);
        let weights: Vec<f64> = {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|w| w / total).collect()
        };
        let spread = rng.random_range(0.0..0.12);
        let centre = rng.random_range(0.01..10.0);
        let values: Vec<f64> = (0..n).map(|_| centre * (1.0 + spread * rng.random_range(-1.0..1.0))).collect();
        let g = jensen_gap(&values, &weights).unwrap();
        min_gap = min_gap.min(g.gap);
        ok &= g.gap >= -1e-14;
        if g.coefficient_of_variation() < 0.1 {
            tested += 1;
            ok &= g.gap <= 2.0 * g.taylor_bound;
        }
        let wide: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..100.0)).collect();
        let gw = jensen_gap(&wide, &weights).unwrap();
        min_gap = min_gap.min(gw.gap);
        ok &= gw.gap >= -1e-14;
    }
    (ok && tested >= 500, format!("min gap {min_gap:.1e}; Taylor check on {tested} small-variance distributions"))
}

fn criterion_13() -> (bool, String) {
    let mut config = ExperimentConfig::default();
    // A reduced Gaussian run keeps the double execution affordable.
    config.gauss.steps = 300;
    config.gauss.variance_window = 50;
    config.gauss.rhos = vec![0.0, 0.5];
    config.gauss.seeds = 2;
    config.gauss.write_traces = true;
    let mut ok = true;
    let mut counted = 0;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut manifests = Vec::new();
    for dir in &dirs {
        let mut per_dir = Vec::new();
        for suite in [Suite::Toy, Suite::Gauss, Suite::Starvation, Suite::Gradcheck, Suite::Report] {
            per_dir.push(runner::run(suite, &config, Some(13), dir.path()).unwrap());
        }
        manifests.push(per_dir);
    }
    for (a, b) in manifests[0].iter().zip(&manifests[1]) {
        ok &= a.config_hash == b.config_hash && a.files == b.files;
        for f in &a.files {
            counted += 1;
            let left = std::fs::read(dirs[0].path().join(&f.path)).unwrap();
            let right = std::fs::read(dirs[1].path().join(&f.path)).unwrap();
            ok &= left == right;
        }
    }
    (ok, format!("{counted} output files byte-identical across two runs of all 5 suites"))
}

fn main() {
    let criteria: [(u32, fn() -> (bool, String)); 13] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
        (13, criterion_13),
    ];
    let filter: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut outcomes = Vec::new();
    for (id, f) in criteria {
        if filter.is_some_and(|only| only != id) {
            continue;
        }
        let (passed, detail) = f();
        println!("{} criterion {id:>2}: {detail}", if passed { "PASS" } else { "FAIL" });
        outcomes.push(Outcome { id, passed, detail });
    }
    let unexpected: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| o.passed == KNOWN_RED.contains(&o.id))
        .collect();
    let reds = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} criteria pass; known failing: {KNOWN_RED:?}", outcomes.len() - reds, outcomes.len());
    if !unexpected.is_empty() {
        for o in unexpected {
            eprintln!("unexpected outcome for criterion {}: {}", o.id, o.detail);
        }
        std::process::exit(1);
    }
}
