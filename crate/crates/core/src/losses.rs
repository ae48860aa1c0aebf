//! DPO and MIO preference losses, with closed-form gradients in the
//! chosen/rejected probabilities.
//!
//! Everything is evaluated from log-probabilities; probabilities are never
//! exponentiated back.

use serde::{Deserialize, Serialize};

use crate::diffcore::{sigmoid, Scalar};
use crate::error::{Error, Result};
use crate::policy::PolicyTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PreferenceTriple {
    pub x: usize,
    pub y_w: usize,
    pub y_l: usize,
}

impl PreferenceTriple {
    pub fn new(x: usize, y_w: usize, y_l: usize) -> Result<Self> {
        if y_w == y_l {
            return Err(Error::InvalidArgument(format!("chosen and rejected are both {y_w}")));
        }
        Ok(Self { x, y_w, y_l })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMethod {
    Dpo,
    Mio,
}

impl LossMethod {
    pub fn name(self) -> &'static str {
        match self {
            LossMethod::Dpo => "dpo",
            LossMethod::Mio => "mio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub method: LossMethod,
    pub beta: f64,
}

impl LossConfig {
    pub fn new(method: LossMethod, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("β must be finite and positive, got {beta}")));
        }
        Ok(Self { method, beta })
    }
}

/// LR± = log π_θ(y±|x) − log π_ref(y±|x) and σ± = σ(β·LR±).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRatios {
    pub lr_plus: f64,
    pub lr_minus: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
}

impl LogRatios {
    pub fn new(lr_plus: f64, lr_minus: f64, beta: f64) -> Self {
        Self {
            lr_plus,
            lr_minus,
            sigma_plus: sigmoid(beta * lr_plus),
            sigma_minus: sigmoid(beta * lr_minus),
        }
    }

    pub fn from_policies(triple: &PreferenceTriple, policy: &PolicyTable, reference: &PolicyTable, beta: f64) -> Result<Self> {
        let lr = |y: usize| -> Result<f64> {
            let (lp, lref) = (policy.log_prob(triple.x, y)?, reference.log_prob(triple.x, y)?);
            if !lp.is_finite() || !lref.is_finite() {
                return Err(Error::ZeroProbability {
                    prompt: triple.x,
                    response: y,
                });
            }
            Ok(lp - lref)
        };
        Ok(Self::new(lr(triple.y_w)?, lr(triple.y_l)?, beta))
    }
}

/// −log σ(β(LR⁺ − LR⁻)).
pub fn dpo_from_log_ratios<S: Scalar>(lr_plus: S, lr_minus: S, beta: f64) -> S {
    -((lr_plus - lr_minus) * beta).log_sigmoid()
}

/// sp(−βLR⁺) + ½sp(βLR⁺) + ½sp(βLR⁻).
pub fn mio_from_log_ratios<S: Scalar>(lr_plus: S, lr_minus: S, beta: f64) -> S {
    (lr_plus * -beta).softplus() + (lr_plus * beta).softplus() * 0.5 + (lr_minus * beta).softplus() * 0.5
}

pub fn loss_from_log_ratios<S: Scalar>(method: LossMethod, lr_plus: S, lr_minus: S, beta: f64) -> S {
    match method {
        LossMethod::Dpo => dpo_from_log_ratios(lr_plus, lr_minus, beta),
        LossMethod::Mio => mio_from_log_ratios(lr_plus, lr_minus, beta),
    }
}

/// (∂ℓ/∂LR⁺, ∂ℓ/∂LR⁻).
pub fn log_ratio_grads(method: LossMethod, lr_plus: f64, lr_minus: f64, beta: f64) -> (f64, f64) {
    match method {
        LossMethod::Dpo => {
            let s = sigmoid(-beta * (lr_plus - lr_minus));
            (-beta * s, beta * s)
        }
        LossMethod::Mio => (
            beta * (1.5 * sigmoid(beta * lr_plus) - 1.0),
            0.5 * beta * sigmoid(beta * lr_minus),
        ),
    }
}

pub fn dpo_loss(triple: &PreferenceTriple, policy: &PolicyTable, reference: &PolicyTable, beta: f64) -> Result<f64> {
    let r = LogRatios::from_policies(triple, policy, reference, beta)?;
    Ok(dpo_from_log_ratios(r.lr_plus, r.lr_minus, beta))
}

pub fn mio_loss(triple: &PreferenceTriple, policy: &PolicyTable, reference: &PolicyTable, beta: f64) -> Result<f64> {
    let r = LogRatios::from_policies(triple, policy, reference, beta)?;
    Ok(mio_from_log_ratios(r.lr_plus, r.lr_minus, beta))
}

pub fn preference_loss(config: &LossConfig, triple: &PreferenceTriple, policy: &PolicyTable, reference: &PolicyTable) -> Result<f64> {
    match config.method {
        LossMethod::Dpo => dpo_loss(triple, policy, reference, config.beta),
        LossMethod::Mio => mio_loss(triple, policy, reference, config.beta),
    }
}

/// Probabilities of one triple: (π⁺, π⁻, π_ref⁺, π_ref⁻).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairProbs {
    pub plus: f64,
    pub minus: f64,
    pub ref_plus: f64,
    pub ref_minus: f64,
}

impl PairProbs {
    pub fn new(plus: f64, minus: f64, ref_plus: f64, ref_minus: f64) -> Result<Self> {
        for (response, p) in [plus, minus, ref_plus, ref_minus].into_iter().enumerate() {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::ZeroProbability { prompt: 0, response });
            }
        }
        Ok(Self {
            plus,
            minus,
            ref_plus,
            ref_minus,
        })
    }

    pub fn log_ratios(&self) -> (f64, f64) {
        (self.plus.ln() - self.ref_plus.ln(), self.minus.ln() - self.ref_minus.ln())
    }
}

/// DPO loss as a function of the four probabilities.
pub fn dpo_loss_probs(p: &PairProbs, beta: f64) -> f64 {
    let (a, b) = p.log_ratios();
    dpo_from_log_ratios(a, b, beta)
}

/// MIO loss as a function of the four probabilities.
pub fn mio_loss_probs(p: &PairProbs, beta: f64) -> f64 {
    let (a, b) = p.log_ratios();
    mio_from_log_ratios(a, b, beta)
}

/// log(1 + α z^β) with α = (π_ref⁺/π_ref⁻)^β and z = π⁻/π⁺.
pub fn dpo_reparameterized(p: &PairProbs, beta: f64) -> f64 {
    let alpha = (p.ref_plus / p.ref_minus).powf(beta);
    let z = p.minus / p.plus;
    (alpha * z.powf(beta)).ln_1p()
}

/// β = 1 ratio form: ln(1 + π_ref⁺/π⁺) + ½ln(1 + π⁺/π_ref⁺) + ½ln(1 + π⁻/π_ref⁻).
pub fn mio_ratio_form(p: &PairProbs) -> f64 {
    (p.ref_plus / p.plus).ln_1p() + 0.5 * (p.plus / p.ref_plus).ln_1p() + 0.5 * (p.minus / p.ref_minus).ln_1p()
}

/// (∂ℓ_DPO/∂π⁺, ∂ℓ_DPO/∂π⁻) =
/// (−αβ z^β / ((1 + αz^β)π⁺), αβ z^{β−1} / ((1 + αz^β)π⁺)).
pub fn dpo_analytic_grads(p: &PairProbs, beta: f64) -> (f64, f64) {
    let log_alpha = beta * (p.ref_plus.ln() - p.ref_minus.ln());
    let log_z = p.minus.ln() - p.plus.ln();
    // αz^β / (1 + αz^β)
    let share = sigmoid(log_alpha + beta * log_z);
    let d_plus = -beta * share / p.plus;
    let d_minus = beta * share * (-log_z).exp() / p.plus;
    (d_plus, d_minus)
}

/// (∂ℓ_MIO/∂π⁺, ∂ℓ_MIO/∂π⁻) = ((β/π⁺)(1.5σ⁺ − 1), βσ⁻/(2π⁻)).
pub fn mio_analytic_grads(p: &PairProbs, beta: f64) -> (f64, f64) {
    let (a, b) = p.log_ratios();
    let r = LogRatios::new(a, b, beta);
    (
        beta / p.plus * (1.5 * r.sigma_plus - 1.0),
        beta / (2.0 * p.minus) * r.sigma_minus,
    )
}

/// Bisection for the LR⁺ at which ∂ℓ_MIO/∂π⁺ changes sign.
pub fn mio_self_regulation_root(beta: f64, tolerance: f64) -> f64 {
    let f = |lr: f64| 1.5 * sigmoid(beta * lr) - 1.0;
    let (mut lo, mut hi) = (-50.0 / beta, 50.0 / beta);
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_difference_gradient;
    use std::f64::consts::LN_2;

    fn probs(a: f64, b: f64, c: f64, d: f64) -> PairProbs {
        PairProbs::new(a, b, c, d).unwrap()
    }

    #[test]
    fn equal_policies() {
        let p = probs(0.3, 0.05, 0.3, 0.05);
        for beta in [0.1, 1.0, 4.0] {
            assert!((dpo_loss_probs(&p, beta) - LN_2).abs() < 1e-15);
            assert!((mio_loss_probs(&p, beta) - 2.0 * LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn worked_examples() {
        // ratio⁺ = 2, ratio⁻ = 0.5
        let p = probs(0.4, 0.1, 0.2, 0.2);
        assert!((dpo_loss_probs(&p, 1.0) - 1.25f64.ln()).abs() < 1e-15);
        let want = 1.5f64.ln() + 0.5 * 3f64.ln() + 0.5 * 1.5f64.ln();
        assert!((mio_loss_probs(&p, 1.0) - want).abs() < 1e-15);
        assert!((want - 1.157504).abs() < 1e-6);
    }

    #[test]
    fn alternative_forms_agree() {
        for &(a, b, c, d) in &[(0.4, 0.1, 0.2, 0.2), (0.01, 0.3, 0.5, 0.02), (0.9, 1e-6, 0.1, 0.4)] {
            let p = probs(a, b, c, d);
            for beta in [0.3, 1.0, 2.5] {
                assert!((dpo_loss_probs(&p, beta) - dpo_reparameterized(&p, beta)).abs() < 1e-13);
            }
            assert!((mio_loss_probs(&p, 1.0) - mio_ratio_form(&p)).abs() < 1e-13);
        }
    }

    #[test]
    fn saturation() {
        let p = probs(0.9, 1e-30, 0.1, 0.5);
        let l = dpo_loss_probs(&p, 1.0);
        assert!(l > 0.0 && l < 1e-25);
    }

    #[test]
    fn grad_examples() {
        let p = probs(0.5, 0.25, 0.5, 0.5);
        let (gp, gm) = dpo_analytic_grads(&p, 1.0);
        assert!((gp + 2.0 / 3.0).abs() < 1e-15 && (gm - 4.0 / 3.0).abs() < 1e-15);
        let (gp, gm) = mio_analytic_grads(&p, 1.0);
        assert!((gp + 0.5).abs() < 1e-15 && (gm - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn grads_match_finite_differences() {
        let p = probs(0.3, 0.07, 0.2, 0.4);
        for beta in [0.5, 1.0, 2.0] {
            let loss = |v: &[f64]| dpo_loss_probs(&PairProbs::new(v[0], v[1], 0.2, 0.4).unwrap(), beta);
            let fd = finite_difference_gradient(loss, &[p.plus, p.minus], 1e-7).unwrap();
            let (gp, gm) = dpo_analytic_grads(&p, beta);
            assert!((fd[0] - gp).abs() / gp.abs() < 1e-6 && (fd[1] - gm).abs() / gm.abs() < 1e-6);

            let loss = |v: &[f64]| mio_loss_probs(&PairProbs::new(v[0], v[1], 0.2, 0.4).unwrap(), beta);
            let fd = finite_difference_gradient(loss, &[p.plus, p.minus], 1e-7).unwrap();
            let (gp, gm) = mio_analytic_grads(&p, beta);
            assert!((fd[0] - gp).abs() / gp.abs() < 1e-6 && (fd[1] - gm).abs() / gm.abs() < 1e-6);
        }
    }

    #[test]
    fn log_ratio_grads_chain_to_probability_grads() {
        let p = probs(0.3, 0.07, 0.2, 0.4);
        let (a, b) = p.log_ratios();
        for (method, grads) in [(LossMethod::Dpo, dpo_analytic_grads(&p, 1.3)), (LossMethod::Mio, mio_analytic_grads(&p, 1.3))] {
            let (gp, gm) = log_ratio_grads(method, a, b, 1.3);
            assert!((gp / p.plus - grads.0).abs() < 1e-12);
            assert!((gm / p.minus - grads.1).abs() < 1e-12);
        }
    }

    #[test]
    fn self_regulation_root() {
        for beta in [0.5, 1.0, 3.0] {
            let root = mio_self_regulation_root(beta, 1e-12);
            assert!((root - LN_2 / beta).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_probability_rejected() {
        assert!(PairProbs::new(0.5, 0.0, 0.5, 0.5).is_err());
        let reference = PolicyTable::uniform(1, 3);
        let policy = PolicyTable::from_probs(1, 3, &[0.5, 0.5, 0.0]).unwrap();
        let t = PreferenceTriple::new(0, 0, 2).unwrap();
        assert!(matches!(dpo_loss(&t, &policy, &reference, 1.0), Err(Error::ZeroProbability { .. })));
        assert!(PreferenceTriple::new(0, 1, 1).is_err());
        assert!(LossConfig::new(LossMethod::Mio, 0.0).is_err());
    }
}
