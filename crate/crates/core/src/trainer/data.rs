use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::arch::ModelInput;
use crate::phantom::Sample;
use crate::tensor::Tensor;

/// Every axial slice of a set of samples, as `[7, S, S]` inputs and
/// `[1, S, S]` normalized-dose targets.
#[derive(Clone, Debug, Default)]
pub struct SliceDataset {
    inputs: Vec<Tensor<f32>>,
    targets: Vec<Tensor<f32>>,
}

/// Stacked slices: input `[N, 7, S, S]`, target `[N, 1, S, S]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: ModelInput<f32>,
    pub target: Tensor<f32>,
}

impl SliceDataset {
    pub fn from_samples(samples: &[Sample]) -> Self {
        let mut out = Self::default();
        for s in samples {
            for z in 0..s.depth() {
                out.push(s.slice_input(z), s.slice_target(z));
            }
        }
        out
    }

    pub fn push(&mut self, input: Tensor<f32>, target: Tensor<f32>) {
        self.inputs.push(input);
        self.targets.push(target);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Keep only the listed slices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch, TrainError> {
        let inputs: Vec<Tensor<f32>> = indices.iter().map(|&i| self.inputs[i].clone()).collect();
        let targets: Vec<Tensor<f32>> = indices.iter().map(|&i| self.targets[i].clone()).collect();
        Ok(Batch {
            input: ModelInput::new(Tensor::stack(&inputs)?)?,
            target: Tensor::stack(&targets)?,
        })
    }

    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.len().div_ceil(batch_size)
    }

    /// The batch trained on at zero-based `step`.
    pub fn batch_for_step(&self, seed: u64, step: u64, batch_size: usize) -> Result<Batch, TrainError> {
        if self.is_empty() {
            return Err(TrainError::Config("training set is empty".into()));
        }
        self.batch(&batch_indices(seed, step, self.len(), batch_size))
    }
}

/// Slice indices for zero-based `step`: each epoch is a seeded permutation
/// split into `ceil(n / batch)` batches; the last batch wraps around to stay
/// full. A pure function of its arguments, so resumed runs see the same data.
pub fn batch_indices(seed: u64, step: u64, n: usize, batch_size: usize) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size) as u64;
    let epoch = step / per_epoch;
    let b = (step % per_epoch) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    (0..batch_size).map(|j| perm[(b * batch_size + j) % n]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_epoch_covers_every_slice() {
        let (n, b) = (7, 2);
        for epoch in 0..3u64 {
            let mut seen = vec![0; n];
            for s in 0..4u64 {
                for i in batch_indices(5, epoch * 4 + s, n, b) {
                    seen[i] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c >= 1));
            assert_eq!(seen.iter().sum::<usize>(), 8);
        }
        assert_eq!(batch_indices(5, 9, n, b), batch_indices(5, 9, n, b));
        assert_ne!(
            (0..4).flat_map(|s| batch_indices(5, s, n, b)).collect::<Vec<_>>(),
            (4..8).flat_map(|s| batch_indices(5, s, n, b)).collect::<Vec<_>>()
        );
    }
}
