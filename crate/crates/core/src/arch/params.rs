use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ArchError;
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    KaimingFanIn(usize),
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered, uniquely named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Draw every spec in order from a seeded stream.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = Self::new();
        for spec in specs {
            let data: Vec<T> = match spec.init {
                Init::Zeros => vec![T::zero(); spec.numel()],
                Init::KaimingFanIn(fan_in) => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    (0..spec.numel()).map(|_| T::of(normal.sample(&mut rng))).collect()
                }
            };
            let tensor = Tensor::new(spec.shape.clone(), data).expect("spec shape");
            set.insert(&spec.name, tensor).expect("spec names are unique");
        }
        set
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<usize, ArchError> {
        if self.index.contains_key(name) {
            return Err(ArchError::DuplicateParam(name.to_string()));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            index: self.index.clone(),
        }
    }

    /// Leaves on `tape`, one per tensor, in set order.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, requires_grad: bool) -> Vec<Var<'t, T>> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect()
    }

    /// Names and shapes must equal `specs`, in order.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<(), ArchError> {
        for spec in specs {
            match self.get(&spec.name) {
                None => return Err(ArchError::MissingParam(spec.name.clone())),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(ArchError::ParamShape {
                        name: spec.name.clone(),
                        expected: spec.shape.clone(),
                        actual: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if self.len() != specs.len() {
            let extra = self
                .names
                .iter()
                .find(|n| !specs.iter().any(|s| &s.name == *n))
                .cloned()
                .unwrap_or_default();
            return Err(ArchError::UnexpectedParam(extra));
        }
        Ok(())
    }

    /// Reorder to match `specs` (after [`check_against`](Self::check_against)).
    pub fn ordered_as(&self, specs: &[ParamSpec]) -> Result<Self, ArchError> {
        self.check_against(specs)?;
        let mut out = Self::new();
        for spec in specs {
            out.insert(&spec.name, self.get(&spec.name).cloned().expect("checked"))?;
        }
        Ok(out)
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> Self {
        let mut out = Self::new();
        for (name, t) in self.iter() {
            if let Some(rest) = name.strip_prefix(prefix) {
                out.insert(rest, t.clone()).expect("unique");
            }
        }
        out
    }
}
