//! Wengert-list tape for scalar reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the local
//! partials with respect to its operands. Nodes are only ever appended, so
//! creation order is a topological order and the reverse pass is a single
//! backwards sweep.
//!
//! Gradient policy: [`Tape::backward`] zeroes every adjoint before it sweeps,
//! so calling it twice on the same root yields the same gradients rather than
//! accumulating.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use smallvec::SmallVec;

use super::scalar::{log_sigmoid, log_sum_exp, sigmoid, softplus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Param,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddConst,
    MulConst,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    LogSigmoid,
    Softplus,
    Sum,
    WeightedSum,
    Dot,
    LogSumExp,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::AddConst => "add_const",
            Op::MulConst => "mul_const",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::LogSigmoid => "log_sigmoid",
            Op::Softplus => "softplus",
            Op::Sum => "sum",
            Op::WeightedSum => "weighted_sum",
            Op::Dot => "dot",
            Op::LogSumExp => "log_sum_exp",
        }
    }
}

/// One recorded operation: forward value, adjoint, and `(operand, ∂self/∂operand)` pairs.
#[derive(Debug, Clone)]
pub struct DiffNode {
    pub op: Op,
    pub value: f64,
    pub grad: f64,
    pub parents: SmallVec<[(usize, f64); 2]>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<DiffNode>>,
    params: RefCell<Vec<usize>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("index", &self.index)
            .field("value", &self.value())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_params(&self) -> usize {
        self.params.borrow().len()
    }

    fn push(&self, op: Op, value: f64, parents: SmallVec<[(usize, f64); 2]>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(DiffNode {
            op,
            value,
            grad: 0.0,
            parents,
        });
        Var {
            tape: self,
            index: nodes.len() - 1,
        }
    }

    /// Registers a differentiable leaf. Its position among params is its id in
    /// the vector returned by [`Tape::backward`].
    pub fn param(&self, value: f64) -> Var<'_> {
        let v = self.push(Op::Param, value, SmallVec::new());
        self.params.borrow_mut().push(v.index);
        v
    }

    pub fn params(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.param(v)).collect()
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Constant, value, SmallVec::new())
    }

    fn check(&self, vars: &[Var<'_>]) {
        for v in vars {
            assert!(
                std::ptr::eq(v.tape, self),
                "variable belongs to a different tape"
            );
        }
    }

    /// Σ items. Panics on an empty slice.
    pub fn sum<'t>(&'t self, items: &[Var<'t>]) -> Var<'t> {
        assert!(!items.is_empty(), "sum of an empty slice");
        self.check(items);
        let value = items.iter().map(|v| v.value()).sum();
        self.push(Op::Sum, value, items.iter().map(|v| (v.index, 1.0)).collect())
    }

    /// Σ wᵢ·itemsᵢ with constant weights.
    pub fn weighted_sum<'t>(&'t self, weights: &[f64], items: &[Var<'t>]) -> Var<'t> {
        assert_eq!(weights.len(), items.len(), "weighted_sum length mismatch");
        assert!(!items.is_empty(), "weighted_sum of an empty slice");
        self.check(items);
        let value = weights
            .iter()
            .zip(items)
            .map(|(w, v)| w * v.value())
            .sum();
        let parents = weights
            .iter()
            .zip(items)
            .map(|(&w, v)| (v.index, w))
            .collect();
        self.push(Op::WeightedSum, value, parents)
    }

    /// Σ aᵢ·bᵢ over two variable slices.
    pub fn dot<'t>(&'t self, a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot length mismatch");
        assert!(!a.is_empty(), "dot of empty slices");
        self.check(a);
        self.check(b);
        let value = a.iter().zip(b).map(|(x, y)| x.value() * y.value()).sum();
        let mut parents = SmallVec::with_capacity(2 * a.len());
        for (x, y) in a.iter().zip(b) {
            parents.push((x.index, y.value()));
            parents.push((y.index, x.value()));
        }
        self.push(Op::Dot, value, parents)
    }

    /// Row-major `matrix` (rows × cols) times `x` (cols).
    pub fn matvec<'t>(&'t self, matrix: &[Var<'t>], rows: usize, x: &[Var<'t>]) -> Vec<Var<'t>> {
        let cols = x.len();
        assert_eq!(matrix.len(), rows * cols, "matvec shape mismatch");
        (0..rows)
            .map(|r| self.dot(&matrix[r * cols..(r + 1) * cols], x))
            .collect()
    }

    /// log Σ exp(itemsᵢ), evaluated with max subtraction.
    pub fn log_sum_exp<'t>(&'t self, items: &[Var<'t>]) -> Var<'t> {
        assert!(!items.is_empty(), "log_sum_exp of an empty slice");
        self.check(items);
        let values: Vec<f64> = items.iter().map(|v| v.value()).collect();
        let value = log_sum_exp(&values);
        let parents = items
            .iter()
            .zip(&values)
            .map(|(v, &x)| {
                let w = if value.is_finite() { (x - value).exp() } else { f64::NAN };
                (v.index, w)
            })
            .collect();
        self.push(Op::LogSumExp, value, parents)
    }

    /// Stable log-softmax: `logits − logsumexp(logits)`.
    pub fn log_softmax<'t>(&'t self, logits: &[Var<'t>]) -> Vec<Var<'t>> {
        let lse = self.log_sum_exp(logits);
        logits.iter().map(|&l| l - lse).collect()
    }

    /// Reverse sweep from `root`. Returns the gradient for every param in
    /// registration order; params the root does not reach get 0.
    pub fn backward(&self, root: Var<'_>) -> Result<Vec<f64>> {
        self.check(&[root]);
        let mut nodes = self.nodes.borrow_mut();
        for (i, node) in nodes.iter().enumerate().take(root.index + 1) {
            if !node.value.is_finite() {
                return Err(Error::NonFiniteNode {
                    node: i,
                    op: node.op.name(),
                    value: node.value,
                });
            }
        }
        for node in nodes.iter_mut() {
            node.grad = 0.0;
        }
        nodes[root.index].grad = 1.0;
        for i in (0..=root.index).rev() {
            let g = nodes[i].grad;
            if g == 0.0 {
                continue;
            }
            // Parents always precede their consumer.
            let (before, rest) = nodes.split_at_mut(i);
            for &(p, partial) in rest[0].parents.iter() {
                before[p].grad += partial * g;
            }
        }
        let params = self.params.borrow();
        Ok(params.iter().map(|&p| nodes[p].grad).collect())
    }

    pub fn node(&self, index: usize) -> DiffNode {
        self.nodes.borrow()[index].clone()
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.tape.nodes.borrow()[self.index].value
    }

    /// Adjoint from the most recent [`Tape::backward`].
    pub fn grad(self) -> f64 {
        self.tape.nodes.borrow()[self.index].grad
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op, value: f64, partial: f64) -> Var<'t> {
        let mut parents = SmallVec::new();
        parents.push((self.index, partial));
        self.tape.push(op, value, parents)
    }

    fn binary(self, other: Var<'t>, op: Op, value: f64, da: f64, db: f64) -> Var<'t> {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
        let mut parents = SmallVec::new();
        parents.push((self.index, da));
        parents.push((other.index, db));
        self.tape.push(op, value, parents)
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value().exp();
        self.unary(Op::Exp, e, e)
    }

    pub fn ln(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Ln, x.ln(), 1.0 / x)
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.value().tanh();
        self.unary(Op::Tanh, t, 1.0 - t * t)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let s = sigmoid(self.value());
        self.unary(Op::Sigmoid, s, s * (1.0 - s))
    }

    /// log σ(x); derivative σ(−x).
    pub fn log_sigmoid(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::LogSigmoid, log_sigmoid(x), sigmoid(-x))
    }

    /// log(1 + eˣ); derivative σ(x).
    pub fn softplus(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Softplus, softplus(x), sigmoid(x))
    }

    pub fn constant_like(self, value: f64) -> Var<'t> {
        self.tape.constant(value)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.value() + rhs.value();
        self.binary(rhs, Op::Add, v, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.value() - rhs.value();
        self.binary(rhs, Op::Sub, v, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, Op::Mul, a * b, b, a)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, Op::Div, a / b, 1.0 / b, -a / (b * b))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, -self.value(), -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(Op::AddConst, self.value() + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(Op::AddConst, self.value() - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(Op::MulConst, self.value() * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.unary(Op::MulConst, self.value() / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        (-rhs) + self
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}
