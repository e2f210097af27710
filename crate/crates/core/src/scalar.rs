//! Scalar abstraction shared by every estimator in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the estimators are generic over (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("count representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Weighted inner product `Σ w_i a_i b_i`.
#[inline]
pub(crate) fn wdot<F: Scalar>(w: &[F], a: &[F], b: &[F]) -> F {
    debug_assert!(w.len() == a.len() && a.len() == b.len());
    let mut acc = F::zero();
    for ((&wi, &ai), &bi) in w.iter().zip(a).zip(b) {
        acc = acc + wi * ai * bi;
    }
    acc
}

/// Weighted squared norm `Σ w_i a_i²`.
#[inline]
pub(crate) fn wsq<F: Scalar>(w: &[F], a: &[F]) -> F {
    let mut acc = F::zero();
    for (&wi, &ai) in w.iter().zip(a) {
        acc = acc + wi * ai * ai;
    }
    acc
}

/// `y += c * x`
#[inline]
pub(crate) fn axpy<F: Scalar>(c: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + c * xi;
    }
}
