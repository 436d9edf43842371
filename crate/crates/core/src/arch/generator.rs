use super::layers::{AttentionGate, Block, ConvLayer, SpecBuilder};
use super::params::{ParamSet, ParamSpec};
use super::{ArchConfig, ArchError, ModelInput};
use crate::tensor::{Scalar, Tape, Var};

/// Output of one generator pass.
#[derive(Debug)]
pub struct PreNetOutput<'t, T> {
    /// Full-resolution normalized dose, `[N, 1, S, S]`.
    pub final_map: Var<'t, T>,
    /// `heads[i - 1]` is the coarse prediction at `S / 2^i`.
    pub heads: Vec<Var<'t, T>>,
    /// One map per gated skip, finest level first. Empty when attention is off.
    pub attention_maps: Vec<Var<'t, T>>,
}

#[derive(Clone, Debug)]
struct EncoderLevel {
    block: Block,
    down: ConvLayer,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    up: ConvLayer,
    gate: Option<AttentionGate>,
    block: Block,
}

/// Residual encoder/decoder with attention-gated skips and 1x1
/// deep-supervision heads.
///
/// Encoder level `l` works at `S / 2^l` with `base * 2^l` channels; the
/// bottleneck sits at level `depth`. Each decoder level upsamples,
/// convolves down to the skip's channel count, gates the skip, and fuses
/// `concat(skip, upsampled)` with a block.
#[derive(Clone, Debug)]
pub struct Generator {
    config: ArchConfig,
    specs: Vec<ParamSpec>,
    stem: ConvLayer,
    encoder: Vec<EncoderLevel>,
    /// Indexed by level, finest first.
    decoder: Vec<DecoderLevel>,
    heads: Vec<ConvLayer>,
    final_head: ConvLayer,
}

impl Generator {
    pub fn new(config: ArchConfig) -> Result<Self, ArchError> {
        config.validate()?;
        let mut sb = SpecBuilder::default();
        let ch = |l: usize| config.channels_at(l);
        let stem = sb.conv("stem", config.in_channels, ch(0), 3, 1);
        let encoder = (0..config.depth)
            .map(|l| EncoderLevel {
                block: sb.block(&format!("enc{l}.block"), ch(l), ch(l), config.residual_enabled),
                down: sb.conv(&format!("enc{l}.down"), ch(l), ch(l + 1), 3, 2),
            })
            .collect();
        let mut decoder: Vec<DecoderLevel> = (0..config.depth)
            .rev()
            .map(|l| DecoderLevel {
                up: sb.conv(&format!("dec{l}.up"), ch(l + 1), ch(l), 3, 1),
                gate: config.attention_enabled.then(|| AttentionGate {
                    conv1: sb.conv(&format!("dec{l}.attn.conv1"), 2 * ch(l), ch(l), 3, 1),
                    conv2: sb.conv(&format!("dec{l}.attn.conv2"), ch(l), ch(l), 3, 1),
                }),
                block: sb.block(&format!("dec{l}.block"), 2 * ch(l), ch(l), config.residual_enabled),
            })
            .collect();
        decoder.reverse();
        let heads = (1..=config.ds_scales)
            .map(|i| sb.conv(&format!("head{i}"), ch(i), 1, 1, 1))
            .collect();
        let final_head = sb.conv("final", ch(0), 1, 1, 1);
        Ok(Self {
            config,
            specs: sb.specs,
            stem,
            encoder,
            decoder,
            heads,
            final_head,
        })
    }

    pub fn config(&self) -> &ArchConfig {
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

    /// Indices (into the bound parameter list) of the attention convs.
    pub fn attention_param_indices(&self) -> Vec<usize> {
        self.decoder
            .iter()
            .filter_map(|d| d.gate.as_ref())
            .flat_map(|g| [g.conv1.w, g.conv1.b, g.conv2.w, g.conv2.b])
            .collect()
    }

    /// Indices of the deep-supervision head parameters.
    pub fn head_param_indices(&self) -> Vec<usize> {
        self.heads.iter().flat_map(|h| [h.w, h.b]).collect()
    }

    /// The final 1x1 head's `(weight, bias)` indices.
    pub fn final_param_indices(&self) -> (usize, usize) {
        (self.final_head.w, self.final_head.b)
    }

    /// Residual block at encoder level `level` (shape preserving).
    pub fn residual_block<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        level: usize,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, ArchError> {
        self.encoder[level].block.apply(params, x, self.config.leaky_slope)
    }

    /// Gate the level-`level` skip `encoder_feat` with the half-resolution
    /// decoder feature. Returns `(gated, attention_map, upsampled_decoder)`.
    /// Without attention the skip passes through unchanged and the map is `None`.
    #[allow(clippy::type_complexity)]
    pub fn attention_gate<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        level: usize,
        encoder_feat: Var<'t, T>,
        decoder_feat: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Option<Var<'t, T>>, Var<'t, T>), ArchError> {
        let es = encoder_feat.shape();
        let ds = decoder_feat.shape();
        if es.len() != 4 || ds.len() != 4 || es[2] != 2 * ds[2] || es[3] != 2 * ds[3] {
            return Err(ArchError::GateExtent {
                encoder: es,
                decoder: ds,
            });
        }
        let dec = &self.decoder[level];
        let slope = self.config.leaky_slope;
        let up = dec.up.apply(params, decoder_feat.upsample_nearest2x()?)?.leaky_relu(slope);
        match &dec.gate {
            Some(gate) => {
                let (gated, map) = gate.apply(params, encoder_feat, up, slope)?;
                Ok((gated, Some(map), up))
            }
            None => Ok((encoder_feat, None, up)),
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        input: Var<'t, T>,
    ) -> Result<PreNetOutput<'t, T>, ArchError> {
        let cfg = &self.config;
        if params.len() != self.specs.len() {
            return Err(ArchError::ParamCount {
                expected: self.specs.len(),
                actual: params.len(),
            });
        }
        let shape = input.shape();
        if shape.len() != 4 || shape[1] != cfg.in_channels || shape[2] != cfg.input_size || shape[3] != cfg.input_size {
            return Err(ArchError::InputShape {
                expected: [cfg.in_channels, cfg.input_size, cfg.input_size],
                actual: shape,
            });
        }
        let slope = cfg.leaky_slope;
        let mut h = self.stem.apply(params, input)?.leaky_relu(slope);
        let mut skips = Vec::with_capacity(cfg.depth);
        for level in &self.encoder {
            h = level.block.apply(params, h, slope)?;
            skips.push(h);
            h = level.down.apply(params, h)?.leaky_relu(slope);
        }

        let tape: &'t Tape<T> = input.tape();
        let mut features = vec![None; cfg.depth + 1];
        features[cfg.depth] = Some(h);
        let mut attention_maps = Vec::new();
        for l in (0..cfg.depth).rev() {
            let (skip, map, up) = self.attention_gate(params, l, skips[l], h)?;
            attention_maps.extend(map);
            let fused = tape.concat_channels(&[skip, up])?;
            h = self.decoder[l].block.apply(params, fused, slope)?;
            features[l] = Some(h);
        }
        attention_maps.reverse();

        let heads = self
            .heads
            .iter()
            .enumerate()
            .map(|(i, head)| head.apply(params, features[i + 1].expect("decoder level")))
            .collect::<Result<Vec<_>, _>>()?;
        let final_map = self.final_head.apply(params, features[0].expect("decoder level"))?;
        Ok(PreNetOutput {
            final_map,
            heads,
            attention_maps,
        })
    }

    /// Convenience: bind `params` as constants and run on a model input.
    pub fn predict<T: Scalar>(&self, params: &ParamSet<T>, input: &ModelInput<T>) -> Result<crate::tensor::Tensor<T>, ArchError> {
        let tape = Tape::new();
        let vars = params.bind(&tape, false);
        let x = tape.constant(input.tensor().clone());
        let out = self.forward(&vars, x)?;
        Ok((*out.final_map.value()).clone())
    }
}
