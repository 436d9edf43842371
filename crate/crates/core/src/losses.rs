//! Training objective: multi-scale MSE on the supervision heads, smooth-L1
//! on the final map, least-squares adversarial terms, and their weighted sum.
//!
//! All inputs are in normalized dose units (dose / prescription).

use thiserror::Error;

use crate::tensor::{Scalar, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("expected {expected} supervision targets, got {actual}")]
    ScaleCount { expected: usize, actual: usize },
    #[error("invalid loss weights: {0}")]
    Weights(String),
    #[error("adversarial loss needs a non-empty batch")]
    EmptyBatch,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the supervised generator term.
    pub lambda1: f64,
    /// Weight of the adversarial generator term.
    pub lambda2: f64,
    /// Weight of deep supervision inside the generator term.
    pub lambda3: f64,
    /// Smooth-L1 transition point.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 2.0,
            lambda2: 1.0,
            lambda3: 0.5,
            delta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.lambda1) && ok(self.lambda2) && ok(self.lambda3)) {
            return Err(LossError::Weights(format!(
                "lambdas must be finite and non-negative, got ({}, {}, {})",
                self.lambda1, self.lambda2, self.lambda3
            )));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(LossError::Weights(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Per-step scalar summary of every objective term.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LossReport {
    pub step: u64,
    pub total: f64,
    pub l_g: f64,
    pub l_final: f64,
    pub l_ds: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
    /// Per-scale deep-supervision MSE, finest first.
    pub ds_terms: Vec<f64>,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,total,l_g,l_final,l_ds,l_adv_g,l_adv_d";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.total, self.l_g, self.l_final, self.l_ds, self.l_adv_g, self.l_adv_d
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.l_g, self.l_final, self.l_ds, self.l_adv_g, self.l_adv_d]
            .iter()
            .chain(&self.ds_terms)
            .all(|v| v.is_finite())
    }
}

pub fn mse<'t, T: Scalar>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>, LossError> {
    Ok(pred.sub(target)?.square().mean_all())
}

/// Per-scale MSE terms.
pub fn deep_supervision_terms<'t, T: Scalar>(
    heads: &[Var<'t, T>],
    targets: &[Var<'t, T>],
) -> Result<Vec<Var<'t, T>>, LossError> {
    if heads.len() != targets.len() {
        return Err(LossError::ScaleCount {
            expected: heads.len(),
            actual: targets.len(),
        });
    }
    heads.iter().zip(targets).map(|(&h, &t)| mse(h, t)).collect()
}

/// Sum over scales of the per-scale mean squared error.
/// With no heads the loss is `None`.
pub fn deep_supervision_loss<'t, T: Scalar>(
    heads: &[Var<'t, T>],
    targets: &[Var<'t, T>],
) -> Result<Option<Var<'t, T>>, LossError> {
    sum_scalars(&deep_supervision_terms(heads, targets)?)
}

pub(crate) fn sum_scalars<'t, T: Scalar>(terms: &[Var<'t, T>]) -> Result<Option<Var<'t, T>>, LossError> {
    let mut iter = terms.iter();
    let Some(&first) = iter.next() else {
        return Ok(None);
    };
    iter.try_fold(first, |acc, &t| acc.add(t))
        .map(Some)
        .map_err(LossError::from)
}

/// Mean smooth-L1 of the residual `target - pred`.
pub fn smooth_l1_loss<'t, T: Scalar>(pred: Var<'t, T>, target: Var<'t, T>, delta: f64) -> Result<Var<'t, T>, LossError> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(LossError::Weights(format!("delta must be positive, got {delta}")));
    }
    Ok(target.sub(pred)?.huber(delta).mean_all())
}

/// Least-squares adversarial terms `(discriminator, generator)`:
/// `mean((real - 1)^2) + mean(fake^2)` and `mean((fake - 1)^2)`.
///
/// Which parameters receive gradient is decided by the caller through the
/// leaves it binds (detached fakes for the discriminator step, frozen
/// discriminator weights for the generator step).
pub fn adversarial_losses<'t, T: Scalar>(
    scores_real: Var<'t, T>,
    scores_fake: Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>), LossError> {
    let d = discriminator_loss(scores_real, scores_fake)?;
    let g = generator_adversarial_loss(scores_fake)?;
    Ok((d, g))
}

pub fn discriminator_loss<'t, T: Scalar>(scores_real: Var<'t, T>, scores_fake: Var<'t, T>) -> Result<Var<'t, T>, LossError> {
    let real = scores_real.add_scalar(-1.0).square().mean_all();
    let fake = scores_fake.square().mean_all();
    Ok(real.add(fake)?)
}

pub fn generator_adversarial_loss<'t, T: Scalar>(scores_fake: Var<'t, T>) -> Result<Var<'t, T>, LossError> {
    if scores_fake.value().is_empty() {
        return Err(LossError::EmptyBatch);
    }
    Ok(scores_fake.add_scalar(-1.0).square().mean_all())
}

/// `lambda1 * (l_final + lambda3 * l_ds) + lambda2 * l_adv_g`.
pub fn total_generator_loss<'t, T: Scalar>(
    l_final: Var<'t, T>,
    l_ds: Var<'t, T>,
    l_adv_g: Var<'t, T>,
    w: &LossWeights,
) -> Result<Var<'t, T>, LossError> {
    let l_g = generator_supervised_loss(l_final, l_ds, w)?;
    Ok(l_g.scale(w.lambda1).add(l_adv_g.scale(w.lambda2))?)
}

/// `l_final + lambda3 * l_ds`.
pub fn generator_supervised_loss<'t, T: Scalar>(
    l_final: Var<'t, T>,
    l_ds: Var<'t, T>,
    w: &LossWeights,
) -> Result<Var<'t, T>, LossError> {
    Ok(l_final.add(l_ds.scale(w.lambda3))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn leaf<'t>(tape: &'t Tape<f64>, shape: &[usize], v: &[f64]) -> Var<'t, f64> {
        tape.leaf(Tensor::from_f64(shape, v).unwrap(), true)
    }

    #[test]
    fn deep_supervision_examples() {
        let tape = Tape::new();
        let h = leaf(&tape, &[2], &[1.0, 1.0]);
        let t = leaf(&tape, &[2], &[0.0, 2.0]);
        let l = deep_supervision_loss(&[h], &[t]).unwrap().unwrap();
        assert_eq!(l.item(), Some(1.0));
        let l3 = deep_supervision_loss(&[h, h, h], &[t, t, t]).unwrap().unwrap();
        assert_eq!(l3.item(), Some(3.0));
        let z = deep_supervision_loss(&[h, t], &[h, t]).unwrap().unwrap();
        assert_eq!(z.item(), Some(0.0));
        assert!(matches!(
            deep_supervision_loss(&[h, h], &[t]),
            Err(LossError::ScaleCount { expected: 2, actual: 1 })
        ));
        let other = leaf(&tape, &[3], &[0.0; 3]);
        assert!(deep_supervision_loss(&[h], &[other]).is_err());
    }

    #[test]
    fn smooth_l1_branches() {
        let tape = Tape::new();
        let zero = leaf(&tape, &[1], &[0.0]);
        let half = leaf(&tape, &[1], &[0.5]);
        let two = leaf(&tape, &[1], &[2.0]);
        assert_eq!(smooth_l1_loss(zero, half, 1.0).unwrap().item(), Some(0.125));
        assert_eq!(smooth_l1_loss(zero, two, 1.0).unwrap().item(), Some(1.5));
        assert_eq!(smooth_l1_loss(two, two, 1.0).unwrap().item(), Some(0.0));
        assert!(smooth_l1_loss(zero, two, 0.0).is_err());
    }

    #[test]
    fn adversarial_examples() {
        let tape = Tape::new();
        let ones = leaf(&tape, &[3], &[1.0; 3]);
        let zeros = leaf(&tape, &[3], &[0.0; 3]);
        let (d, _) = adversarial_losses(ones, zeros).unwrap();
        assert_eq!(d.item(), Some(0.0));
        let (_, g) = adversarial_losses(zeros, ones).unwrap();
        assert_eq!(g.item(), Some(0.0));
        let h = leaf(&tape, &[1], &[0.5]);
        let (d, g) = adversarial_losses(h, h).unwrap();
        assert_eq!((d.item(), g.item()), (Some(0.5), Some(0.25)));
    }

    #[test]
    fn total_loss_examples() {
        let tape = Tape::new();
        let s = |v| leaf(&tape, &[1], &[v]);
        let w = LossWeights::default();
        assert_eq!(total_generator_loss(s(1.0), s(2.0), s(3.0), &w).unwrap().item(), Some(7.0));
        assert_eq!(total_generator_loss(s(0.0), s(0.0), s(0.0), &w).unwrap().item(), Some(0.0));
        let pure = LossWeights { lambda2: 0.0, ..w };
        assert_eq!(total_generator_loss(s(1.0), s(2.0), s(3.0), &pure).unwrap().item(), Some(4.0));
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { lambda1: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { delta: 0.0, ..Default::default() }.validate().is_err());
    }
}
