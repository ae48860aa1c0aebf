//! Critic families T(x, y) scored against a policy's log-probability.
//!
//! Every critic receives log π_θ(y|x) as a [`Scalar`], so the same scoring
//! code runs on plain floats and on a tape. θ-independent critics ignore it
//! and return a constant in the caller's context.

use rand::Rng;

use crate::diffcore::{Mlp, MlpShape, Scalar};
use crate::error::{Error, Result};
use crate::policy::PolicyTable;

/// Hidden width of neural critics.
pub const CRITIC_HIDDEN: usize = 64;

pub trait Critic {
    /// Short identifier used in reports.
    fn label(&self) -> String;

    /// Whether the score reads the policy's log-probability at all.
    fn depends_on_policy(&self) -> bool;

    /// T(x, y) given `log_policy` = log π_θ(y|x).
    fn score<S: Scalar>(&self, x: usize, y: usize, log_policy: S) -> Result<S>;

    /// ∂T(x, y) / ∂ log π_θ(y|x).
    fn slope(&self, x: usize, y: usize, log_policy: f64) -> Result<f64>;
}

/// Input encoding of a [`NeuralCritic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticInput {
    /// one-hot(x) ⊕ one-hot(y)
    OneHot { num_prompts: usize, num_responses: usize },
    /// (x, y) ∈ ℝ²
    Real,
}

/// Free neural critic T_φ; never reads policy parameters.
#[derive(Debug, Clone)]
pub struct NeuralCritic {
    pub net: Mlp,
    pub input: CriticInput,
}

impl NeuralCritic {
    pub fn discrete<R: Rng + ?Sized>(num_prompts: usize, num_responses: usize, rng: &mut R) -> Self {
        let shape = MlpShape {
            input: num_prompts + num_responses,
            hidden: CRITIC_HIDDEN,
            output: 1,
        };
        Self {
            net: Mlp::new(shape, rng),
            input: CriticInput::OneHot {
                num_prompts,
                num_responses,
            },
        }
    }

    pub fn real<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let shape = MlpShape {
            input: 2,
            hidden: CRITIC_HIDDEN,
            output: 1,
        };
        Self {
            net: Mlp::new(shape, rng),
            input: CriticInput::Real,
        }
    }

    /// Score of a real-valued pair.
    pub fn score_real(&self, x: f64, y: f64) -> f64 {
        self.net.forward_one(&[x, y])[0]
    }

    fn score_value(&self, x: usize, y: usize) -> Result<f64> {
        match self.input {
            CriticInput::OneHot {
                num_prompts,
                num_responses,
            } => {
                if x >= num_prompts {
                    return Err(Error::IndexOutOfRange {
                        what: "prompt",
                        index: x,
                        size: num_prompts,
                    });
                }
                if y >= num_responses {
                    return Err(Error::IndexOutOfRange {
                        what: "response",
                        index: y,
                        size: num_responses,
                    });
                }
                let mut input = vec![0.0; num_prompts + num_responses];
                input[x] = 1.0;
                input[num_prompts + y] = 1.0;
                Ok(self.net.forward_one(&input)[0])
            }
            CriticInput::Real => Ok(self.score_real(x as f64, y as f64)),
        }
    }
}

impl Critic for NeuralCritic {
    fn label(&self) -> String {
        "neural".into()
    }
    fn depends_on_policy(&self) -> bool {
        false
    }
    fn score<S: Scalar>(&self, x: usize, y: usize, log_policy: S) -> Result<S> {
        Ok(log_policy.lift(self.score_value(x, y)?))
    }
    fn slope(&self, _x: usize, _y: usize, _log_policy: f64) -> Result<f64> {
        Ok(0.0)
    }
}

/// Fixed score table, θ-independent.
#[derive(Debug, Clone)]
pub struct TableCritic {
    pub scores: Vec<Vec<f64>>,
}

impl Critic for TableCritic {
    fn label(&self) -> String {
        "table".into()
    }
    fn depends_on_policy(&self) -> bool {
        false
    }
    fn score<S: Scalar>(&self, x: usize, y: usize, log_policy: S) -> Result<S> {
        let v = lookup(&self.scores, x, y)?;
        Ok(log_policy.lift(v))
    }
    fn slope(&self, _x: usize, _y: usize, _log_policy: f64) -> Result<f64> {
        Ok(0.0)
    }
}

fn lookup(table: &[Vec<f64>], x: usize, y: usize) -> Result<f64> {
    let row = table.get(x).ok_or(Error::IndexOutOfRange {
        what: "prompt",
        index: x,
        size: table.len(),
    })?;
    row.get(y).copied().ok_or(Error::IndexOutOfRange {
        what: "response",
        index: y,
        size: row.len(),
    })
}

/// T(x, y) = β·(log π_θ(y|x) − log π_den(y|x)) + c.
#[derive(Debug, Clone)]
pub struct LogRatioCritic {
    denominator: Vec<Vec<f64>>,
    pub scale: f64,
    pub offset: f64,
}

impl LogRatioCritic {
    pub fn new(denominator: &PolicyTable, scale: f64, offset: f64) -> Self {
        Self {
            denominator: denominator.log_prob_table(),
            scale,
            offset,
        }
    }

    /// Closed-form score with an explicit numerator policy.
    pub fn score_with(&self, numerator: &PolicyTable, x: usize, y: usize) -> Result<f64> {
        self.score(x, y, numerator.log_prob(x, y)?)
    }
}

impl Critic for LogRatioCritic {
    fn label(&self) -> String {
        format!("log-ratio(beta={})", self.scale)
    }
    fn depends_on_policy(&self) -> bool {
        true
    }
    fn score<S: Scalar>(&self, x: usize, y: usize, log_policy: S) -> Result<S> {
        let den = lookup(&self.denominator, x, y)?;
        if !den.is_finite() || !log_policy.value().is_finite() {
            return Err(Error::ZeroProbability { prompt: x, response: y });
        }
        Ok((log_policy - den) * self.scale + self.offset)
    }
    fn slope(&self, x: usize, y: usize, _log_policy: f64) -> Result<f64> {
        lookup(&self.denominator, x, y)?;
        Ok(self.scale)
    }
}

/// T(x, y) = c(x, y) + L·tanh(log π_θ(y|x)); L-Lipschitz in log π_θ.
#[derive(Debug, Clone)]
pub struct LipschitzCritic {
    pub base: Vec<Vec<f64>>,
    pub lipschitz: f64,
}

impl LipschitzCritic {
    pub fn new(base: Vec<Vec<f64>>, lipschitz: f64) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::InvalidArgument(format!("Lipschitz constant must be positive, got {lipschitz}")));
        }
        Ok(Self { base, lipschitz })
    }
}

impl Critic for LipschitzCritic {
    fn label(&self) -> String {
        format!("lipschitz(L={})", self.lipschitz)
    }
    fn depends_on_policy(&self) -> bool {
        true
    }
    fn score<S: Scalar>(&self, x: usize, y: usize, log_policy: S) -> Result<S> {
        let c = lookup(&self.base, x, y)?;
        Ok(log_policy.tanh() * self.lipschitz + c)
    }
    fn slope(&self, x: usize, y: usize, log_policy: f64) -> Result<f64> {
        lookup(&self.base, x, y)?;
        let t = log_policy.tanh();
        Ok(self.lipschitz * (1.0 - t * t))
    }
}

/// Any of the critic families, for call sites that pick one at runtime.
#[derive(Debug, Clone)]
pub enum AnyCritic {
    Neural(NeuralCritic),
    Table(TableCritic),
    LogRatio(LogRatioCritic),
    Lipschitz(LipschitzCritic),
}

impl Critic for AnyCritic {
    fn label(&self) -> String {
        match self {
            AnyCritic::Neural(c) => c.label(),
            AnyCritic::Table(c) => c.label(),
            AnyCritic::LogRatio(c) => c.label(),
            AnyCritic::Lipschitz(c) => c.label(),
        }
    }
    fn depends_on_policy(&self) -> bool {
        match self {
            AnyCritic::Neural(c) => c.depends_on_policy(),
            AnyCritic::Table(c) => c.depends_on_policy(),
            AnyCritic::LogRatio(c) => c.depends_on_policy(),
            AnyCritic::Lipschitz(c) => c.depends_on_policy(),
        }
    }
    fn score<S: Scalar>(&self, x: usize, y: usize, log_policy: S) -> Result<S> {
        match self {
            AnyCritic::Neural(c) => c.score(x, y, log_policy),
            AnyCritic::Table(c) => c.score(x, y, log_policy),
            AnyCritic::LogRatio(c) => c.score(x, y, log_policy),
            AnyCritic::Lipschitz(c) => c.score(x, y, log_policy),
        }
    }
    fn slope(&self, x: usize, y: usize, log_policy: f64) -> Result<f64> {
        match self {
            AnyCritic::Neural(c) => c.slope(x, y, log_policy),
            AnyCritic::Table(c) => c.slope(x, y, log_policy),
            AnyCritic::LogRatio(c) => c.slope(x, y, log_policy),
            AnyCritic::Lipschitz(c) => c.slope(x, y, log_policy),
        }
    }
}

/// Evaluates `critic` at (x, y) against `policy`.
pub fn critic_score<C: Critic>(critic: &C, policy: &PolicyTable, x: usize, y: usize) -> Result<f64> {
    critic.score(x, y, policy.log_prob(x, y)?)
}
