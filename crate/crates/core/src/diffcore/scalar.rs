//! Numerically stable scalar primitives and the [`Scalar`] abstraction that
//! lets loss and estimator formulas run either on plain `f64` or on a tape.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::Var;

/// log(1 + eᶻ) as max(z, 0) + log(1 + e^{−|z|}).
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log σ(z) = −softplus(−z).
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// log Σ exp(xᵢ) with max subtraction. Empty input gives −∞.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Stable log-softmax of a logit row.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

/// A real number that formulas can be written against once and evaluated
/// either directly (`f64`) or with gradient recording ([`Var`]).
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same evaluation context as `self`.
    fn lift(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn log_sigmoid(self) -> Self;
    fn softplus(self) -> Self;
    /// Σ items; `items` must be non-empty.
    fn sum(items: &[Self]) -> Self;
    /// Σ wᵢ·itemsᵢ; `items` must be non-empty.
    fn weighted_sum(weights: &[f64], items: &[Self]) -> Self;
    /// log Σ exp(itemsᵢ); `items` must be non-empty.
    fn log_sum_exp(items: &[Self]) -> Self;
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> f64 {
        c
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    fn sigmoid(self) -> f64 {
        sigmoid(self)
    }
    fn log_sigmoid(self) -> f64 {
        log_sigmoid(self)
    }
    fn softplus(self) -> f64 {
        softplus(self)
    }
    fn sum(items: &[f64]) -> f64 {
        items.iter().sum()
    }
    fn weighted_sum(weights: &[f64], items: &[f64]) -> f64 {
        weights.iter().zip(items).map(|(w, x)| w * x).sum()
    }
    fn log_sum_exp(items: &[f64]) -> f64 {
        log_sum_exp(items)
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        Var::value(self)
    }
    fn lift(self, c: f64) -> Self {
        self.constant_like(c)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn sigmoid(self) -> Self {
        Var::sigmoid(self)
    }
    fn log_sigmoid(self) -> Self {
        Var::log_sigmoid(self)
    }
    fn softplus(self) -> Self {
        Var::softplus(self)
    }
    fn sum(items: &[Self]) -> Self {
        items[0].tape().sum(items)
    }
    fn weighted_sum(weights: &[f64], items: &[Self]) -> Self {
        items[0].tape().weighted_sum(weights, items)
    }
    fn log_sum_exp(items: &[Self]) -> Self {
        items[0].tape().log_sum_exp(items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for z in [-20.0, -1.0, 0.0, 0.5, 3.0, 20.0] {
            let naive = (1.0 + f64::exp(z)).ln();
            assert!((softplus(z) - naive).abs() < 1e-14, "z = {z}");
        }
        assert_eq!(softplus(1000.0), 1000.0);
    }

    #[test]
    fn sigmoid_symmetry() {
        for z in [-40.0, -3.0, 0.0, 2.5, 40.0] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_sum_exp_handles_neg_infinity() {
        let v = log_sum_exp(&[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]);
        assert_eq!(v, 0.0);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}
