//! Dense numerical substrate: row-major tensors, a reverse-mode gradient
//! tape and the Adam optimizer.
//!
//! Everything is generic over the element type so the same model code can
//! run in `f32` for training and in `f64` when gradients are checked against
//! finite differences.

mod adam;
mod kernels;
mod ops;
mod tape;
mod tensor;

#[cfg(test)]
mod gradcheck;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use ops::{
    attention, cross_entropy, layer_norm, matmul, mean_pool, relu, sigmoid, softmax, tanh,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

/// Floating-point element type usable in tensors.
pub trait Scalar:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    /// Converts an `f64` literal into this type.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("representable literal")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("tensor shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("index {index} out of range for {op} with extent {extent}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("cross-entropy mean undefined: every target is ignored")]
    UndefinedMean,
    #[error("mean pool over row {row} with no real tokens")]
    EmptyRow { row: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;
