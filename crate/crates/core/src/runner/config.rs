//! Experiment configuration: one TOML file, one table per subcommand.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::OptimizerMethod;
use crate::error::{Error, Result};
use crate::gauss_bench::EstimatorChoice;
use crate::losses::LossMethod;
use crate::policy::Parameterization;
use crate::toy_sim::{NegativePool, SMALL_MASS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Toy,
    Gauss,
    Starvation,
    Gradcheck,
    Report,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Self::Toy => "toy",
            Self::Gauss => "gauss",
            Self::Starvation => "starvation",
            Self::Gradcheck => "gradcheck",
            Self::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySection {
    pub methods: Vec<LossMethod>,
    pub scenarios: Vec<u8>,
    /// Number of consecutive seeds starting at the run seed.
    pub seeds: u64,
    pub beta: f64,
    pub steps: usize,
    pub step_size: f64,
    pub batch: usize,
    pub optimizer: OptimizerMethod,
    pub parameterization: Parameterization,
    pub negative_pool: NegativePool,
    pub small_mass: f64,
}

impl Default for ToySection {
    fn default() -> Self {
        Self {
            methods: vec![LossMethod::Dpo, LossMethod::Mio],
            scenarios: vec![1, 2, 3, 4],
            seeds: 1,
            beta: 1.0,
            steps: 2000,
            step_size: 0.05,
            batch: 4,
            optimizer: OptimizerMethod::PlainGradient,
            parameterization: Parameterization::TabularLogits,
            negative_pool: NegativePool::RejectedSet,
            small_mass: SMALL_MASS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussSection {
    pub rhos: Vec<f64>,
    pub kinds: Vec<EstimatorChoice>,
    pub seeds: u64,
    pub batch: usize,
    pub negatives: usize,
    pub steps: usize,
    pub step_size: f64,
    pub variance_window: usize,
    pub write_traces: bool,
}

impl Default for GaussSection {
    fn default() -> Self {
        Self {
            rhos: vec![0.0, 0.3, 0.5, 0.7, 0.9],
            kinds: vec![EstimatorChoice::Mine, EstimatorChoice::Jsd],
            seeds: 5,
            batch: 256,
            negatives: 1,
            steps: 5000,
            step_size: 1e-3,
            variance_window: 500,
            write_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StarvationSection {
    pub lipschitz: Vec<f64>,
    pub pi_stars: Vec<f64>,
    /// Random instances per critic family for the exact-zero checks.
    pub instances: u64,
}

impl Default for StarvationSection {
    fn default() -> Self {
        Self {
            lipschitz: vec![1.0, 2.0],
            pi_stars: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            instances: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub points: usize,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            points: 1000,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// CSV files to chart, relative to the output directory. Empty means
    /// every CSV with a known schema.
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub toy: ToySection,
    pub gauss: GaussSection,
    pub starvation: StarvationSection,
    pub gradcheck: GradcheckSection,
    pub report: ReportSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Copy with the seed fixed: an explicit override wins, then the file,
    /// then 0.
    pub fn resolved(&self, seed_override: Option<u64>) -> Self {
        let mut out = self.clone();
        out.seed = Some(seed_override.or(self.seed).unwrap_or(0));
        out
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.toy.steps, 2000);
        assert_eq!(c.gauss.batch, 256);
    }

    #[test]
    fn sections_parse() {
        let c = ExperimentConfig::from_toml_str(
            "seed = 4\n[toy]\nmethods = [\"mio\"]\nscenarios = [2]\nparameterization = \"mlp\"\noptimizer = \"adaptive-moment\"\n[gauss]\nkinds = [\"jsd\"]\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(4));
        assert_eq!(c.toy.methods, vec![LossMethod::Mio]);
        assert_eq!(c.toy.parameterization, Parameterization::Mlp);
        assert_eq!(c.gauss.kinds, vec![EstimatorChoice::Jsd]);
    }

    #[test]
    fn unknown_keys_are_named() {
        for text in ["[toy]\nstep = 3\n", "colour = 1\n", "[gauss]\nrho = 0.5\n"] {
            match ExperimentConfig::from_toml_str(text) {
                Err(Error::Config(msg)) => {
                    let key = text.split('=').next().unwrap().rsplit('\n').next().unwrap().trim();
                    assert!(msg.contains(key), "{msg}");
                }
                other => panic!("expected config error, got {other:?}"),
            }
        }
    }

    #[test]
    fn hash_is_stable_and_seed_sensitive() {
        let c = ExperimentConfig::default();
        let a = c.resolved(Some(1)).hash().unwrap();
        assert_eq!(a, c.resolved(Some(1)).hash().unwrap());
        assert_ne!(a, c.resolved(Some(2)).hash().unwrap());
        assert_eq!(a.len(), 64);
        let round = ExperimentConfig::from_toml_str(&c.resolved(Some(1)).to_toml().unwrap()).unwrap();
        assert_eq!(round.hash().unwrap(), a);
    }
}
