//! Minimal tape-based reverse-mode differentiation.
//!
//! The training objective is built from a small closed set of primitives:
//! elementwise arithmetic, convolution, relu, bilinear resize, windowed
//! attention logits, row softmax, soft copy, and a smoothed L1 loss. Each
//! primitive records itself on a [`Tape`]; [`Tape::backward`] replays the
//! records in reverse and accumulates exact gradients.
//!
//! Everything is generic over [`Real`] so production can run in f32 while
//! gradient checking runs the same code in f64, where central finite
//! differences are trustworthy.

pub mod check;
pub mod tape;

use crate::error::{Error, Result};

pub use check::{
    finite_diff_check, finite_diff_check_probes, finite_diff_compare, gradcheck_suite,
    value_and_grad, GradCheckReport,
};
pub use tape::{ConvSpec, PadMode, Tape, VarId};

/// Scalar type the graph computes in: f32 for production, f64 for checks.
pub trait Real:
    num_traits::Float
    + std::ops::AddAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Sentinel for masked-out attention logits; underflows to exactly zero
    /// probability after the max-subtracted softmax.
    fn big_negative() -> Self {
        Self::from_f64(-1e30)
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// A dense row-major tensor. Image-shaped tensors are `[h, w, c]` with the
/// channel index fastest; matrices are `[rows, cols]`; scalars are `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R> {
    pub dims: Vec<usize>,
    pub data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(dims: Vec<usize>, data: Vec<R>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{dims:?} = {expected} values"),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("tensor contains non-finite values"));
        }
        Ok(Tensor { dims, data })
    }

    pub fn scalar(v: R) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![v],
        }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![R::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Lossy elementwise cast between check (f64) and production (f32) modes.
    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| T::from_f64((*v).as_f64())).collect(),
        }
    }
}
