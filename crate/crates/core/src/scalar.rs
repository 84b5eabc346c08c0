//! Scalar abstraction: the numeric element type of every tensor and plane.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point element type: `f32` for training and inference, `f64` for
/// gradient checking.
pub trait Scalar:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Lossy round-trip through the on-disk f32 representation.
    fn from_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;
    fn standard_normal<R: Rng>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
    fn standard_normal<R: Rng>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
    fn standard_normal<R: Rng>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}
