use super::params::{Init, ParamSpec};
use super::ArchError;
use crate::tensor::{Scalar, Var};

/// Registers parameter specs and hands out their indices.
#[derive(Debug, Default)]
pub(crate) struct SpecBuilder {
    pub specs: Vec<ParamSpec>,
}

impl SpecBuilder {
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> ConvLayer {
        let w = self.specs.len();
        self.specs.push(ParamSpec {
            name: format!("{name}.w"),
            shape: vec![cout, cin, kernel, kernel],
            init: Init::KaimingFanIn(cin * kernel * kernel),
        });
        self.specs.push(ParamSpec {
            name: format!("{name}.b"),
            shape: vec![cout],
            init: Init::Zeros,
        });
        ConvLayer {
            w,
            b: w + 1,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn block(&mut self, name: &str, cin: usize, cout: usize, residual: bool) -> Block {
        let conv1 = self.conv(&format!("{name}.conv1"), cin, cout, 3, 1);
        let conv2 = self.conv(&format!("{name}.conv2"), cout, cout, 3, 1);
        let proj = (residual && cin != cout).then(|| self.conv(&format!("{name}.proj"), cin, cout, 1, 1));
        Block {
            conv1,
            conv2,
            proj,
            residual,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    pub fn apply<'t, T: Scalar>(&self, params: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>, ArchError> {
        Ok(x.conv2d(params[self.w], Some(params[self.b]), self.stride, self.padding)?)
    }
}

/// Two 3x3 convolutions. With `residual` the input (projected by a 1x1
/// conv when channel counts differ) is added back before the last
/// activation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub proj: Option<ConvLayer>,
    pub residual: bool,
}

impl Block {
    pub fn apply<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        x: Var<'t, T>,
        slope: f64,
    ) -> Result<Var<'t, T>, ArchError> {
        let h = self.conv1.apply(params, x)?.leaky_relu(slope);
        let h = self.conv2.apply(params, h)?;
        if !self.residual {
            return Ok(h.leaky_relu(slope));
        }
        let skip = match &self.proj {
            Some(p) => p.apply(params, x)?,
            None => x,
        };
        Ok(skip.add(h)?.leaky_relu(slope))
    }
}

/// Spatial attention on a skip connection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionGate {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl AttentionGate {
    /// `encoder` and `decoder_up` share extents. Returns `(gated, attention_map)`.
    pub fn apply<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        encoder: Var<'t, T>,
        decoder_up: Var<'t, T>,
        slope: f64,
    ) -> Result<(Var<'t, T>, Var<'t, T>), ArchError> {
        let tape = encoder.tape();
        let cat = tape.concat_channels(&[encoder, decoder_up])?;
        let h = self.conv1.apply(params, cat)?.leaky_relu(slope);
        let map = self.conv2.apply(params, h)?.sigmoid();
        Ok((encoder.mul(map)?, map))
    }
}
