use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} produced by `{op}` (tape node {node})")]
    NonFiniteNode {
        node: usize,
        op: &'static str,
        value: f64,
    },

    #[error("objective is non-finite at probe point along coordinate {coordinate}")]
    NonFiniteProbe { coordinate: usize },

    #[error("non-finite gradient at parameter {index}; optimizer step refused")]
    NonFiniteGradient { index: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("index out of range: {what} = {index} (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("policy is frozen; parameters cannot be updated")]
    FrozenPolicy,

    #[error("operation requires the tabular parameterization")]
    NotTabular,

    #[error("log of zero probability at prompt {prompt}, response {response}")]
    ZeroProbability { prompt: usize, response: usize },

    #[error("critic score {score} at prompt {prompt}, response {response} exceeds the exp overflow guard; rescale the critic")]
    ScoreOverflow {
        prompt: usize,
        response: usize,
        score: f64,
    },

    #[error("support mismatch at prompt {prompt}, response {response}: policy has mass where the reference has none")]
    SupportMismatch { prompt: usize, response: usize },

    #[error("non-finite exponent in energy reweighting at prompt {prompt}, response {response}")]
    NonFiniteExponent { prompt: usize, response: usize },

    #[error("self-consistent normalizer did not converge at prompt {prompt} after {iterations} iterations (last changes: {trace:?})")]
    FixedPointDiverged {
        prompt: usize,
        iterations: usize,
        trace: Vec<f64>,
    },

    #[error("empty sample list: {0}")]
    EmptySamples(&'static str),

    #[error("non-positive value {value} at sample {index}")]
    NonPositiveSample { index: usize, value: f64 },

    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        snapshot: Vec<Vec<f64>>,
    },

    #[error("csv schema mismatch: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
