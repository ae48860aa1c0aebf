//! Reverse-mode automatic differentiation over `f64`, central finite
//! differences as the reference oracle, first-order optimizers, and the
//! three-layer perceptron used by policies and critics.

pub mod fd;
pub mod mlp;
pub mod optim;
pub mod scalar;
pub mod tape;

pub use fd::{finite_difference_gradient, max_relative_error, relative_error};
pub use mlp::{Mlp, MlpShape, MlpTrace};
pub use optim::{OptimizerMethod, OptimizerState};
pub use scalar::{log_sigmoid, log_softmax, log_sum_exp, sigmoid, softplus, Scalar};
pub use tape::{DiffNode, Op, Tape, Var};
