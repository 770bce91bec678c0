//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sysid_core::model::TransformerConfig;
use sysid_core::sysgen::ClassSpec;
use sysid_core::train::TrainConfig;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// One experiment: shared model/training settings plus the runner-specific
/// section selected by `"experiment"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub precision: Precision,
    pub model: TransformerConfig,
    pub train: TrainConfig,
    #[serde(flatten)]
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum Experiment {
    Pretrain(PretrainSpec),
    Metagen(MetagenSpec),
    AdaptMc(AdaptMcSpec),
    Short2long(Short2LongSpec),
    Eval(EvalSpec),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pretrain(_) => "pretrain",
            Self::Metagen(_) => "metagen",
            Self::AdaptMc(_) => "adapt_mc",
            Self::Short2long(_) => "short2long",
            Self::Eval(_) => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    pub class: ClassSpec,
    /// Warm start from these weights instead of a fresh initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingArm {
    pub name: String,
    pub class: ClassSpec,
}

fn d_test_systems() -> usize {
    256
}
fn d_test_seed() -> u64 {
    0x7E57_C1A5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetagenSpec {
    /// Each arm trains a fresh model on its class with the same seed.
    pub arms: Vec<TrainingArm>,
    pub test_class: ClassSpec,
    #[serde(default = "d_test_systems")]
    pub test_systems: usize,
    #[serde(default = "d_test_seed")]
    pub test_seed: u64,
}

fn d_quantiles() -> [f64; 2] {
    [0.25, 0.75]
}

/// Monte Carlo adaptation; `train` holds the adaptation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptMcSpec {
    pub checkpoint: PathBuf,
    pub target: ClassSpec,
    pub runs: usize,
    /// Train/validation/test sequence counts per system.
    pub split: [usize; 3],
    #[serde(default = "d_quantiles")]
    pub quantiles: [f64; 2],
}

/// `train` drives the short arm; `long_train` both long arms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Short2LongSpec {
    pub class: ClassSpec,
    pub long_train: TrainConfig,
    /// Skip the short arm and warm-start from these weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_checkpoint: Option<PathBuf>,
}

fn d_batches() -> usize {
    50
}

/// Stream evaluation of a checkpoint; geometry comes from `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub checkpoint: PathBuf,
    pub class: ClassSpec,
    #[serde(default = "d_batches")]
    pub n_batches: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Structural checks plus existence of every referenced checkpoint.
    pub fn validate(&self) -> Result<(), CliError> {
        let core = |e: sysid_core::Error| CliError::Config(e.to_string());
        self.model.validate().map_err(core)?;
        self.train.validate().map_err(core)?;
        let class = |c: &ClassSpec| c.validate().map_err(|e| CliError::Config(e.to_string()));
        let exists = |p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(CliError::Config(format!("checkpoint {} does not exist", p.display())))
            }
        };
        match &self.experiment {
            Experiment::Pretrain(s) => {
                class(&s.class)?;
                s.init_checkpoint.as_deref().map_or(Ok(()), exists)?;
            }
            Experiment::Metagen(s) => {
                if s.arms.is_empty() {
                    return Err(CliError::Config("metagen needs at least one arm".into()));
                }
                let mut names: Vec<&str> = s.arms.iter().map(|a| a.name.as_str()).collect();
                names.sort_unstable();
                names.dedup();
                if names.len() != s.arms.len() || names.iter().any(|n| !valid_name(n)) {
                    return Err(CliError::Config("arm names must be unique and use [A-Za-z0-9_+-]".into()));
                }
                s.arms.iter().try_for_each(|a| class(&a.class))?;
                class(&s.test_class)?;
                if s.test_systems == 0 {
                    return Err(CliError::Config("test_systems must be >= 1".into()));
                }
            }
            Experiment::AdaptMc(s) => {
                class(&s.target)?;
                exists(&s.checkpoint)?;
                if s.runs == 0 || s.split.iter().any(|&n| n == 0) {
                    return Err(CliError::Config("runs and every split count must be >= 1".into()));
                }
                let [lo, hi] = s.quantiles;
                if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                    return Err(CliError::Config(format!("quantiles {lo}, {hi} must satisfy 0 <= lo <= hi <= 1")));
                }
                if s.split[2] * s.runs < 2 {
                    return Err(CliError::Config("quantile bands need at least two test sequences in total".into()));
                }
            }
            Experiment::Short2long(s) => {
                class(&s.class)?;
                s.long_train.validate().map_err(core)?;
                s.short_checkpoint.as_deref().map_or(Ok(()), exists)?;
            }
            Experiment::Eval(s) => {
                class(&s.class)?;
                exists(&s.checkpoint)?;
                if s.n_batches == 0 {
                    return Err(CliError::Config("n_batches must be >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "_+-".contains(c))
}
