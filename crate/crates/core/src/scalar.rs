//! Floating-point abstraction so the same kernels run in f32 and f64.
//!
//! Training uses `f32` for speed and memory; gradient verification runs the
//! identical code in `f64`, where finite differences are trustworthy.

use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssignOps};

/// Element type of tensors: `f32` or `f64`.
pub trait Scalar:
    Float + NumAssignOps + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn from_f32(x: f32) -> Self;
    /// Widening/narrowing casts named to avoid clashing with
    /// `num_traits::ToPrimitive`.
    fn as_f64(self) -> f64;
    fn as_f32(self) -> f32;
    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}
