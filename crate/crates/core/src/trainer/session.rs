use std::path::Path;

use super::{Adam, Batch, SliceDataset, TrainConfig, TrainError};
use crate::arch::{Discriminator, Generator, ParamSet};
use crate::losses::{
    deep_supervision_terms, discriminator_loss, generator_adversarial_loss, smooth_l1_loss, sum_scalars, total_generator_loss,
    LossReport,
};
use crate::persist::{load_checkpoint, save_checkpoint};
use crate::tensor::{Tape, Tensor, Var};

const DISC_SEED_OFFSET: u64 = 0x0D15_C0DE;

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed steps.
    pub step: u64,
    pub generator: ParamSet<f32>,
    pub discriminator: ParamSet<f32>,
    pub generator_adam: Adam,
    pub discriminator_adam: Adam,
    pub history: Vec<LossReport>,
}

pub struct Trainer {
    config: TrainConfig,
    generator: Generator,
    discriminator: Discriminator,
    state: TrainState,
}

fn scalar_of<T: crate::tensor::Scalar>(v: Var<'_, T>) -> f64 {
    v.item().map(|x| x.as_f64()).unwrap_or(f64::NAN)
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let generator = Generator::new(config.arch)?;
        let discriminator = Discriminator::new(config.disc)?;
        let gen_params = generator.init_params(config.seed);
        let disc_params = discriminator.init_params(config.seed.wrapping_add(DISC_SEED_OFFSET));
        let state = TrainState {
            step: 0,
            generator_adam: Adam::new(config.adam, &gen_params),
            discriminator_adam: Adam::new(config.adam, &disc_params),
            generator: gen_params,
            discriminator: disc_params,
            history: Vec::new(),
        };
        Ok(Self {
            config,
            generator,
            discriminator,
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    /// One discriminator update on detached predictions (skipped when
    /// `lambda2 == 0`), then one generator update. Nothing is updated if a
    /// loss is non-finite.
    pub fn step(&mut self, batch: &Batch) -> Result<LossReport, TrainError> {
        let w = self.config.weights;
        let lr = self.config.lr;
        let step = self.state.step + 1;
        let non_finite = |history: &[LossReport]| TrainError::NonFinite {
            step,
            last: history.last().cloned().map(Box::new),
        };

        let tape = Tape::new();
        let gen_vars = self.state.generator.bind(&tape, true);
        let x = tape.constant(batch.input.tensor().clone());
        let y = tape.constant(batch.target.clone());
        let out = self.generator.forward(&gen_vars, x)?;
        let mut ds_targets = Vec::with_capacity(out.heads.len());
        let mut coarse = y;
        for _ in &out.heads {
            coarse = coarse.avgpool2x()?;
            ds_targets.push(coarse);
        }
        let ds_terms = deep_supervision_terms(&out.heads, &ds_targets)?;
        let zero = || tape.constant(Tensor::scalar(0.0));
        let l_ds = sum_scalars(&ds_terms)?.unwrap_or_else(zero);
        let l_final = smooth_l1_loss(out.final_map, y, w.delta)?;
        if !(scalar_of(l_final).is_finite() && scalar_of(l_ds).is_finite()) {
            return Err(non_finite(&self.state.history));
        }

        let adversarial = w.lambda2 > 0.0;
        let mut l_adv_d = 0.0;
        if adversarial {
            let d_tape = Tape::new();
            let d_vars = self.state.discriminator.bind(&d_tape, true);
            let condition = d_tape.constant(batch.input.tensor().clone());
            let real = d_tape.constant(batch.target.clone());
            let fake = d_tape.constant((*out.final_map.value()).clone());
            let s_real = self.discriminator.forward(&d_vars, real, condition)?;
            let s_fake = self.discriminator.forward(&d_vars, fake, condition)?;
            let loss = discriminator_loss(s_real, s_fake)?;
            l_adv_d = scalar_of(loss);
            if !l_adv_d.is_finite() {
                return Err(non_finite(&self.state.history));
            }
            let grads = d_tape.backward(loss)?;
            let g: Vec<Tensor<f32>> = d_vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
            self.state
                .discriminator_adam
                .update(&mut self.state.discriminator, &g, lr);
        }

        let l_adv_g = if adversarial {
            let d_vars = self.state.discriminator.bind(&tape, false);
            let scores = self.discriminator.forward(&d_vars, out.final_map, x)?;
            generator_adversarial_loss(scores)?
        } else {
            zero()
        };
        let total = total_generator_loss(l_final, l_ds, l_adv_g, &w)?;
        let report = LossReport {
            step,
            total: scalar_of(total),
            l_g: scalar_of(l_final) + w.lambda3 * scalar_of(l_ds),
            l_final: scalar_of(l_final),
            l_ds: scalar_of(l_ds),
            l_adv_g: scalar_of(l_adv_g),
            l_adv_d,
            ds_terms: ds_terms.iter().map(|&t| scalar_of(t)).collect(),
        };
        if !report.is_finite() {
            return Err(non_finite(&self.state.history));
        }
        let grads = tape.backward(total)?;
        let g: Vec<Tensor<f32>> = gen_vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
        self.state.generator_adam.update(&mut self.state.generator, &g, lr);

        self.state.step = step;
        self.state.history.push(report.clone());
        Ok(report)
    }

    /// Total steps implied by the config for a dataset of `n` slices.
    pub fn planned_steps(&self, n: usize) -> u64 {
        self.config
            .steps
            .unwrap_or((self.config.epochs * n.div_ceil(self.config.batch_size)) as u64)
    }

    /// Train from the current step up to `until`, calling `on_step` after each.
    pub fn fit(&mut self, data: &SliceDataset, until: u64, mut on_step: impl FnMut(&LossReport)) -> Result<(), TrainError> {
        while self.state.step < until {
            let batch = data.batch_for_step(self.config.seed, self.state.step, self.config.batch_size)?;
            let report = self.step(&batch)?;
            on_step(&report);
        }
        Ok(())
    }

    /// Parameters, Adam moments and counters under `gen/`, `disc/`,
    /// `adam.gen.{m,v}/`, `adam.disc.{m,v}/` and `state/`.
    pub fn checkpoint(&self) -> ParamSet<f32> {
        let s = &self.state;
        let mut out = ParamSet::new();
        let mut put = |prefix: &str, set: &ParamSet<f32>| {
            for (name, t) in set.iter() {
                out.insert(&format!("{prefix}{name}"), t.clone()).expect("prefixes keep names unique");
            }
        };
        put("gen/", &s.generator);
        put("disc/", &s.discriminator);
        put("adam.gen.m/", &s.generator_adam.m);
        put("adam.gen.v/", &s.generator_adam.v);
        put("adam.disc.m/", &s.discriminator_adam.m);
        put("adam.disc.v/", &s.discriminator_adam.v);
        for (name, v) in [("state/step", s.step), ("state/adam.gen.t", s.generator_adam.t), ("state/adam.disc.t", s.discriminator_adam.t)] {
            out.insert(name, Tensor::new(vec![2], split_u64(v)).expect("two words")).expect("unique");
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        Ok(save_checkpoint(path, &self.checkpoint())?)
    }

    /// Rebuild a trainer from [`checkpoint`](Self::checkpoint) output. The
    /// config must describe the same architectures. Loss history is not
    /// stored; it restarts empty.
    pub fn restore(config: TrainConfig, ckpt: &ParamSet<f32>) -> Result<Self, TrainError> {
        let mut t = Self::new(config)?;
        let gen_specs = t.generator.param_specs().to_vec();
        let disc_specs = t.discriminator.param_specs().to_vec();
        let counter = |name: &str| -> Result<u64, TrainError> {
            let v = ckpt
                .get(name)
                .ok_or_else(|| TrainError::Checkpoint(format!("missing `{name}`")))?;
            join_u64(v.data()).ok_or_else(|| TrainError::Checkpoint(format!("`{name}` is not a step counter")))
        };
        let s = &mut t.state;
        s.generator = ckpt.strip_prefix("gen/").ordered_as(&gen_specs)?;
        s.discriminator = ckpt.strip_prefix("disc/").ordered_as(&disc_specs)?;
        s.generator_adam.m = ckpt.strip_prefix("adam.gen.m/").ordered_as(&gen_specs)?;
        s.generator_adam.v = ckpt.strip_prefix("adam.gen.v/").ordered_as(&gen_specs)?;
        s.discriminator_adam.m = ckpt.strip_prefix("adam.disc.m/").ordered_as(&disc_specs)?;
        s.discriminator_adam.v = ckpt.strip_prefix("adam.disc.v/").ordered_as(&disc_specs)?;
        s.step = counter("state/step")?;
        s.generator_adam.t = counter("state/adam.gen.t")?;
        s.discriminator_adam.t = counter("state/adam.disc.t")?;
        Ok(t)
    }

    pub fn resume(config: TrainConfig, path: impl AsRef<Path>) -> Result<Self, TrainError> {
        Self::restore(config, &load_checkpoint(path)?)
    }
}

/// A u64 carried as the bit patterns of two f32 words (high, low).
fn split_u64(v: u64) -> Vec<f32> {
    vec![f32::from_bits((v >> 32) as u32), f32::from_bits(v as u32)]
}

fn join_u64(words: &[f32]) -> Option<u64> {
    match words {
        [hi, lo] => Some((u64::from(hi.to_bits()) << 32) | u64::from(lo.to_bits())),
        _ => None,
    }
}
