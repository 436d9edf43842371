//! Alternating adversarial training: one discriminator update on detached
//! predictions, then one generator update against the frozen
//! discriminator, both with Adam. Also ablation arms and evaluation.

mod adam;
mod data;
mod eval;
mod session;

pub use adam::{Adam, AdamConfig};
pub use data::{batch_indices, Batch, SliceDataset};
pub use eval::{evaluate, evaluate_predictions, predict_volume, AblationReport, ApeStat, ApeTable, EvalReport, SampleEval, APE_METRICS};
pub use session::{Trainer, TrainState};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::arch::{ArchConfig, ArchError, DiscriminatorConfig};
use crate::dosimetry::DosimetryError;
use crate::losses::{LossError, LossReport, LossWeights};
use crate::persist::{PersistError, Split};
use crate::phantom::PhantomError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}{}", match last { Some(r) => format!(" (last finite: {})", r.csv_row()), None => String::new() })]
    NonFinite { step: u64, last: Option<Box<LossReport>> },
    #[error("dataset has no `{0}` samples")]
    MissingSplit(Split),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Dosimetry(#[from] DosimetryError),
}

/// Ablation arms, from plain backbone to the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arm {
    UNet,
    AUNet,
    RAUNet,
    Full,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::UNet, Arm::AUNet, Arm::RAUNet, Arm::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::UNet => "unet",
            Arm::AUNet => "aunet",
            Arm::RAUNet => "raunet",
            Arm::Full => "full",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown arm `{s}` (expected unet, aunet, raunet or full)"))
    }
}

/// Switches an arm sets on top of the default architecture and weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmSwitches {
    pub attention_enabled: bool,
    pub residual_enabled: bool,
    pub lambda2: f64,
    pub lambda3: f64,
    pub ds_scales: usize,
}

/// Every arm keeps deep supervision; the RAUNet arm supervises only the
/// finest head, the full model all three.
pub fn ablation_arm(arm: Arm) -> ArmSwitches {
    let d = LossWeights::default();
    let full = ArchConfig::default();
    let (attention_enabled, residual_enabled, lambda2, ds_scales) = match arm {
        Arm::UNet => (false, false, 0.0, full.ds_scales),
        Arm::AUNet => (false, false, d.lambda2, full.ds_scales),
        Arm::RAUNet => (true, true, d.lambda2, 1),
        Arm::Full => (full.attention_enabled, full.residual_enabled, d.lambda2, full.ds_scales),
    };
    ArmSwitches {
        attention_enabled,
        residual_enabled,
        lambda2,
        lambda3: d.lambda3,
        ds_scales,
    }
}

impl ArmSwitches {
    pub fn apply(&self, arch: ArchConfig, weights: LossWeights) -> (ArchConfig, LossWeights) {
        (
            ArchConfig {
                attention_enabled: self.attention_enabled,
                residual_enabled: self.residual_enabled,
                ds_scales: self.ds_scales.min(arch.depth),
                ..arch
            },
            LossWeights {
                lambda2: self.lambda2,
                lambda3: self.lambda3,
                ..weights
            },
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arm: Arm,
    pub arch: ArchConfig,
    pub disc: DiscriminatorConfig,
    pub weights: LossWeights,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<u64>,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_arm(Arm::Full)
    }
}

impl TrainConfig {
    /// Desk-scale defaults for `arm`.
    pub fn for_arm(arm: Arm) -> Self {
        let (arch, weights) = ablation_arm(arm).apply(ArchConfig::default(), LossWeights::default());
        Self {
            arm,
            arch,
            disc: DiscriminatorConfig::default(),
            weights,
            lr: 1e-3,
            batch_size: 2,
            epochs: 10,
            steps: None,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }

    /// Published optimisation settings: lr 1e-5, batch 16, 100 epochs.
    pub fn paper_scale(mut self) -> Self {
        self.lr = 1e-5;
        self.batch_size = 16;
        self.epochs = 100;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.arch.validate()?;
        self.weights.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.disc.in_channels != self.arch.in_channels {
            return Err(TrainError::Config(format!(
                "discriminator conditions on {} channels, generator input has {}",
                self.disc.in_channels, self.arch.in_channels
            )));
        }
        self.adam.validate()
    }

    /// Apply one `key=value` setting (config files and flags share keys).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, TrainError> {
            value
                .trim()
                .parse()
                .map_err(|_| TrainError::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key.trim() {
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "steps" => self.steps = Some(parse(key, value)?),
            "seed" => self.seed = parse(key, value)?,
            "lambda1" => self.weights.lambda1 = parse(key, value)?,
            "lambda2" => self.weights.lambda2 = parse(key, value)?,
            "lambda3" => self.weights.lambda3 = parse(key, value)?,
            "delta" => self.weights.delta = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "eps" => self.adam.eps = parse(key, value)?,
            "base_channels" => self.arch.base_channels = parse(key, value)?,
            "depth" => self.arch.depth = parse(key, value)?,
            "ds_scales" => self.arch.ds_scales = parse(key, value)?,
            "input_size" => self.arch.input_size = parse(key, value)?,
            "leaky_slope" => {
                self.arch.leaky_slope = parse(key, value)?;
                self.disc.leaky_slope = self.arch.leaky_slope;
            }
            "disc_base_channels" => self.disc.base_channels = parse(key, value)?,
            "disc_depth" => self.disc.depth = parse(key, value)?,
            other => return Err(TrainError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parse a `key=value` file; blank lines and `#` comments are ignored.
    pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, TrainError> {
        text.lines()
            .enumerate()
            .map(|(i, l)| (i, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(i, l)| {
                l.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| TrainError::Config(format!("line {}: expected key=value", i + 1)))
            })
            .collect()
    }
}
