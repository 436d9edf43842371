use super::layers::{ConvLayer, SpecBuilder};
use super::params::{ParamSet, ParamSpec};
use super::ArchError;
use crate::tensor::{Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    /// Conditioning channels (the model input), the candidate adds one more.
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 7,
            base_channels: 16,
            depth: 4,
            leaky_slope: 0.2,
        }
    }
}

/// Conditional critic: `concat(candidate, condition)`, strided 3x3 convs,
/// global spatial mean, affine, sigmoid. One score per batch item.
#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    specs: Vec<ParamSpec>,
    convs: Vec<ConvLayer>,
    fc: ConvLayer,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self, ArchError> {
        if config.in_channels == 0 || config.base_channels == 0 || config.depth == 0 {
            return Err(ArchError::Config("discriminator extents must be positive".into()));
        }
        let mut sb = SpecBuilder::default();
        let mut cin = config.in_channels + 1;
        let convs = (0..config.depth)
            .map(|l| {
                let cout = config.base_channels << l;
                let layer = sb.conv(&format!("disc{l}"), cin, cout, 3, 2);
                cin = cout;
                layer
            })
            .collect();
        let fc = sb.conv("disc.fc", cin, 1, 1, 1);
        Ok(Self {
            config,
            specs: sb.specs,
            convs,
            fc,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn num_params(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        ParamSet::init(&self.specs, seed)
    }

    /// Scores in (0, 1), shape `[N]`.
    pub fn forward<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        candidate: Var<'t, T>,
        condition: Var<'t, T>,
    ) -> Result<Var<'t, T>, ArchError> {
        if params.len() != self.specs.len() {
            return Err(ArchError::ParamCount {
                expected: self.specs.len(),
                actual: params.len(),
            });
        }
        let cs = candidate.shape();
        let xs = condition.shape();
        if cs.len() != 4 || xs.len() != 4 || cs[0] != xs[0] || cs[1] != 1 || cs[2..] != xs[2..] {
            return Err(ArchError::CandidateShape {
                candidate: cs,
                condition: xs,
            });
        }
        let n = cs[0];
        let mut h = candidate.tape().concat_channels(&[candidate, condition])?;
        for conv in &self.convs {
            h = conv.apply(params, h)?.leaky_relu(self.config.leaky_slope);
        }
        let pooled = h.spatial_mean()?;
        let logit = self.fc.apply(params, pooled)?;
        Ok(logit.reshape(&[n])?.sigmoid())
    }
}
