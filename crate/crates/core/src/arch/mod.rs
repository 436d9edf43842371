//! The dose generator (PreNet) and the conditional discriminator (AdvNet).

mod discriminator;
mod generator;
mod layers;
mod params;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, PreNetOutput};
pub use params::{Init, ParamSet, ParamSpec};

use thiserror::Error;

use crate::tensor::{Scalar, Tensor, TensorError};

/// Input channel order: CT followed by the structure masks.
pub const CHANNEL_LAYOUT: [&str; 7] = ["ct", "ptv", "bladder", "femur_l", "femur_r", "small_intestine", "rectum"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input must be [N, {}, {}, {}], got {actual:?}", expected[0], expected[1], expected[2])]
    InputShape { expected: [usize; 3], actual: Vec<usize> },
    #[error("attention gate needs decoder extent half the encoder's: encoder {encoder:?}, decoder {decoder:?}")]
    GateExtent { encoder: Vec<usize>, decoder: Vec<usize> },
    #[error("candidate {candidate:?} does not match condition {condition:?}")]
    CandidateShape { candidate: Vec<usize>, condition: Vec<usize> },
    #[error("expected {expected} bound parameters, got {actual}")]
    ParamCount { expected: usize, actual: usize },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("parameter `{name}` has shape {actual:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("channel {channel} ({name}) {problem}")]
    InputValues {
        channel: usize,
        name: String,
        problem: &'static str,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Number of downsamplings.
    pub depth: usize,
    /// Number of deep-supervision heads, at `S/2 .. S/2^ds_scales`.
    pub ds_scales: usize,
    pub attention_enabled: bool,
    pub residual_enabled: bool,
    pub input_size: usize,
    pub leaky_slope: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            in_channels: CHANNEL_LAYOUT.len(),
            base_channels: 16,
            depth: 4,
            ds_scales: 3,
            attention_enabled: true,
            residual_enabled: true,
            input_size: 64,
            leaky_slope: 0.2,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), ArchError> {
        let fail = |m: String| Err(ArchError::Config(m));
        if self.in_channels == 0 || self.base_channels == 0 || self.depth == 0 || self.input_size == 0 {
            return fail("in_channels, base_channels, depth and input_size must be positive".into());
        }
        if self.ds_scales > self.depth {
            return fail(format!("ds_scales {} exceeds depth {}", self.ds_scales, self.depth));
        }
        if self.depth >= usize::BITS as usize || !self.input_size.is_multiple_of(1usize << self.depth) {
            return fail(format!(
                "input_size {} is not divisible by 2^{}",
                self.input_size, self.depth
            ));
        }
        Ok(())
    }

    /// Channel count at encoder level `level`.
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Recover the configuration a generator parameter set was built for.
    /// `input_size` is not encoded in the weights and must be supplied.
    pub fn infer_from_params<T: Scalar>(params: &ParamSet<T>, input_size: usize) -> Result<Self, ArchError> {
        let stem = params
            .get("stem.w")
            .ok_or_else(|| ArchError::MissingParam("stem.w".into()))?;
        let (base_channels, in_channels) = (stem.shape()[0], stem.shape()[1]);
        let depth = (0..).take_while(|l| params.get(&format!("enc{l}.down.w")).is_some()).count();
        let ds_scales = (1..).take_while(|i| params.get(&format!("head{i}.w")).is_some()).count();
        let cfg = Self {
            in_channels,
            base_channels,
            depth,
            ds_scales,
            attention_enabled: params.get("dec0.attn.conv1.w").is_some(),
            residual_enabled: params.get("dec0.block.proj.w").is_some(),
            input_size,
            ..Self::default()
        };
        let g = Generator::new(cfg)?;
        params.check_against(g.param_specs())?;
        Ok(cfg)
    }
}

/// Network input `[N, C, S, S]`: CT in `[0, 1]` then binary masks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    tensor: Tensor<T>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self, ArchError> {
        let [_, c, h, w] = tensor.dims4("model input")?;
        if h != w {
            return Err(ArchError::InputShape {
                expected: [c, h, h],
                actual: tensor.shape().to_vec(),
            });
        }
        let plane = h * w;
        for (i, chunk) in tensor.data().chunks(plane).enumerate() {
            let channel = i % c;
            let name = CHANNEL_LAYOUT.get(channel).copied().unwrap_or("mask").to_string();
            let bad = if channel == 0 {
                chunk.iter().any(|v| !(*v >= T::zero() && *v <= T::one()))
            } else {
                chunk.iter().any(|v| *v != T::zero() && *v != T::one())
            };
            if bad {
                return Err(ArchError::InputValues {
                    channel,
                    name,
                    problem: if channel == 0 { "has values outside [0, 1]" } else { "is not binary" },
                });
            }
        }
        Ok(Self { tensor })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }
}
