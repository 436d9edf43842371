use super::TrainError;
use crate::arch::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(unit(self.beta1) && unit(self.beta2) && self.eps.is_finite() && self.eps > 0.0) {
            return Err(TrainError::Config(format!(
                "adam needs betas in [0, 1) and eps > 0, got ({}, {}, {})",
                self.beta1, self.beta2, self.eps
            )));
        }
        Ok(())
    }
}

/// Adam with bias correction. Moments are stored in f32 (so a checkpoint
/// captures them exactly); each update is computed in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Updates applied so far.
    pub t: u64,
    pub m: ParamSet<f32>,
    pub v: ParamSet<f32>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet<f32>) -> Self {
        Self {
            config,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// `grads[i]` belongs to the i-th tensor of `params`.
    pub fn update(&mut self, params: &mut ParamSet<f32>, grads: &[Tensor<f32>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let tensors = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in tensors.iter_mut().zip(grads).zip(ms.iter_mut()).zip(vs.iter_mut()) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                let g = f64::from(gi);
                let mi = beta1 * f64::from(m[i]) + (1.0 - beta1) * g;
                let vi = beta2 * f64::from(v[i]) + (1.0 - beta2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                p[i] = (f64::from(p[i]) - step) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f32) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut p = one(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.update(&mut p, &[Tensor::new(vec![1], vec![0.3]).unwrap()], 0.01);
        // Bias-corrected first step is lr * g / (|g| + eps).
        let expected = 1.0 - 0.01 * 0.3 / (0.3 + 1e-8);
        assert!((f64::from(p.tensors()[0].data()[0]) - expected).abs() < 1e-7);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = one(3.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        for _ in 0..2000 {
            let x = p.tensors()[0].data()[0];
            adam.update(&mut p, &[Tensor::new(vec![1], vec![2.0 * (x - 0.5)]).unwrap()], 0.05);
        }
        assert!((p.tensors()[0].data()[0] - 0.5).abs() < 1e-3);
    }
}
