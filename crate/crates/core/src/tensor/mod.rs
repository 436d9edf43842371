//! Dense tensors and an eager reverse-mode tape providing every primitive
//! the networks and losses use.

mod array;
mod kernels;
mod scalar;
mod tape;

pub use array::Tensor;
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {shape:?} has a zero extent; empty tensors are not representable")]
    EmptyExtent { shape: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {axis} axis mismatch, expected {expected}, got {actual}")]
    Axis {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("conv2d: kernel extent {kernel} exceeds padded {axis} extent {padded_extent}")]
    KernelTooLarge {
        axis: &'static str,
        kernel: usize,
        padded_extent: usize,
    },
    #[error("conv2d: stride must be positive")]
    ZeroStride,
    #[error("{op}: {axis} extent {extent} is odd")]
    OddExtent {
        op: &'static str,
        axis: &'static str,
        extent: usize,
    },
    #[error("backward: root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("variable belongs to a different tape")]
    ForeignTape,
}
