use approx::assert_relative_eq;
use proptest::prelude::*;

use miolab_core::diffcore::{log_softmax, log_sum_exp, softplus, Tape};
use miolab_core::estimators::{infonce_estimate, jensen_gap, jsd_estimate, pairwise_logsigmoid};
use miolab_core::gauss_bench::analytic_mi;
use miolab_core::losses::{
    dpo_analytic_grads, dpo_loss_probs, dpo_reparameterized, loss_from_log_ratios, mio_analytic_grads, mio_loss_probs,
    mio_ratio_form, LossMethod, PairProbs,
};
use miolab_core::policy::{ebm_reweight, verify_critic_reward_identity, PolicyTable};
use miolab_core::starvation::{dv_directional_derivative, CriticKind, StarvationInstance, StarvationProbe};
use miolab_core::toy_sim::{run_training, ScenarioConfig};

fn prob() -> impl Strategy<Value = f64> {
    1e-6f64..1.0
}

fn pair() -> impl Strategy<Value = PairProbs> {
    (prob(), prob(), prob(), prob()).prop_map(|(a, b, c, d)| PairProbs::new(a, b, c, d).unwrap())
}

fn grid() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softplus_is_stable_and_positive(z in -800.0f64..800.0) {
        let s = softplus(z);
        prop_assert!(s.is_finite() && s >= 0.0);
        prop_assert!(s >= z);
    }

    #[test]
    fn log_softmax_normalizes(logits in prop::collection::vec(-500.0f64..500.0, 1..20)) {
        let lp = log_softmax(&logits);
        prop_assert!(log_sum_exp(&lp).abs() < 1e-12);
        prop_assert!(lp.iter().all(|v| *v <= 1e-15));
    }

    #[test]
    fn scalar_and_tape_losses_agree(a in -6.0f64..6.0, b in -6.0f64..6.0, beta in 0.05f64..3.0) {
        for method in [LossMethod::Dpo, LossMethod::Mio] {
            let tape = Tape::new();
            let v = tape.params(&[a, b]);
            let on_tape = loss_from_log_ratios(method, v[0], v[1], beta).value();
            prop_assert_eq!(on_tape, loss_from_log_ratios(method, a, b, beta));
        }
    }

    #[test]
    fn dpo_forms_agree_and_ratio_law_holds(p in pair(), beta in 0.05f64..3.0) {
        assert_relative_eq!(dpo_loss_probs(&p, beta), dpo_reparameterized(&p, beta), max_relative = 1e-10, epsilon = 1e-300);
        let (gp, gm) = dpo_analytic_grads(&p, beta);
        prop_assert!(gp < 0.0 && gm > 0.0);
        assert_relative_eq!(gm / -gp, p.plus / p.minus, max_relative = 1e-10);
    }

    #[test]
    fn mio_chosen_gradient_bounded(p in pair(), beta in 0.05f64..3.0) {
        let (gp, gm) = mio_analytic_grads(&p, beta);
        prop_assert!(gp.abs() <= beta / p.plus * (1.0 + 1e-12));
        prop_assert!(gm > 0.0 && gm <= beta / (2.0 * p.minus) * (1.0 + 1e-12));
        assert_relative_eq!(mio_loss_probs(&p, 1.0), mio_ratio_form(&p), max_relative = 1e-12);
    }

    #[test]
    fn single_sample_reductions(tp in -20.0f64..20.0, tm in -20.0f64..20.0) {
        prop_assert!((infonce_estimate(&[tp], &[tm]).unwrap() - pairwise_logsigmoid(tp, tm)).abs() < 1e-13);
        // JSD objective is maximized by the centred critic at 0 for identical pools
        prop_assert!(jsd_estimate(&[tp], &[tp]).unwrap() <= -2.0 * std::f64::consts::LN_2 + 1e-12);
    }

    #[test]
    fn jensen_gap_nonnegative(values in prop::collection::vec(1e-3f64..1e3, 1..30)) {
        let weights = vec![1.0 / values.len() as f64; values.len()];
        let g = jensen_gap(&values, &weights).unwrap();
        prop_assert!(g.gap >= -1e-14);
    }

    #[test]
    fn analytic_mi_even(rho in -0.999f64..0.999) {
        prop_assert_eq!(analytic_mi(rho).unwrap(), analytic_mi(-rho).unwrap());
        prop_assert!(analytic_mi(rho).unwrap() >= 0.0);
    }

    #[test]
    fn reweighting_stays_normalized(logits in grid(), reward in grid(), alpha in 0.05f64..5.0) {
        let base = PolicyTable::from_logits(4, 10, logits).unwrap();
        let reward: Vec<Vec<f64>> = reward.chunks(10).map(<[f64]>::to_vec).collect();
        let out = ebm_reweight(&base, &reward, alpha).unwrap();
        for row in out.policy.prob_table() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_reward_identity(policy in grid(), reference in grid(), beta in 0.2f64..2.0, kappa in 0.1f64..0.9) {
        let policy = PolicyTable::from_logits(4, 10, policy).unwrap();
        let reference = PolicyTable::from_logits(4, 10, reference).unwrap();
        prop_assert!(verify_critic_reward_identity(&policy, &reference, kappa / beta, beta).unwrap() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn theta_independent_critic_never_moves_own_logit(seed in any::<u64>(), zero_support in any::<bool>()) {
        let probe = StarvationProbe { x_star: 2, y_star: 7, critic: CriticKind::ThetaIndependent, zero_support };
        let d = dv_directional_derivative(&StarvationInstance::random(probe, seed).unwrap()).unwrap();
        prop_assert!(d.autodiff.abs() <= 1e-12);
    }

    #[test]
    fn log_ratio_critic_zero_under_support_condition(seed in any::<u64>()) {
        let probe = StarvationProbe { x_star: 0, y_star: 5, critic: CriticKind::LogRatio, zero_support: true };
        let d = dv_directional_derivative(&StarvationInstance::random(probe, seed).unwrap()).unwrap();
        prop_assert!(d.autodiff.abs() <= 1e-10);
        prop_assert!((d.autodiff - d.decomposition()).abs() <= 1e-10);
    }

    #[test]
    fn lipschitz_critic_respects_bound(seed in any::<u64>(), l in 0.1f64..4.0) {
        let probe = StarvationProbe { x_star: 1, y_star: 3, critic: CriticKind::Lipschitz(l), zero_support: true };
        let inst = StarvationInstance::random(probe, seed).unwrap();
        let pi = inst.policy.prob(1, 3).unwrap();
        let d = dv_directional_derivative(&inst).unwrap();
        prop_assert!(d.autodiff.abs() <= 2.0 * l * pi + 1e-10);
    }

    #[test]
    fn toy_runs_stay_normalized(scenario in 1u8..=4, mio in any::<bool>(), seed in any::<u64>(), step in 0.01f64..0.5) {
        let method = if mio { LossMethod::Mio } else { LossMethod::Dpo };
        let mut c = ScenarioConfig::new(scenario, method, seed);
        c.steps = 100;
        c.step_size = step;
        let log = run_training(&c).unwrap();
        prop_assert!(log.max_normalization_error(&miolab_core::policy::ResponseCategories::standard()) <= 1e-10);
        prop_assert!(log.last().unwrap().rejected_mean < log.initial().unwrap().rejected_mean);
    }
}
