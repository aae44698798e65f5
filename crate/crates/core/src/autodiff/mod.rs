//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Values live in [`Tensor`]s. A forward pass records every operation on a
//! [`Tape`] and returns [`Var`] handles; [`Tape::backward`] then sweeps the
//! tape in reverse from a scalar root. Binary ops broadcast only when one
//! operand's shape is a suffix of the other's (bias rows, scalars).

mod adam;
mod tape;
mod tensor;

pub use adam::Adam;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;


use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("non-finite gradient for parameter #{param} at element {index}")]
    NonFiniteGradient { param: usize, index: usize },
}
