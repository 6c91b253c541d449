//! Scalar abstraction shared by every estimator.
//!
//! All numerical code is written against [`Real`], which is implemented for
//! `f32` and `f64`. Convergence thresholds are expressed in `f64` and widened
//! to a small multiple of machine epsilon when the scalar cannot resolve them.

use std::fmt::{Debug, Display};

/// Floating point scalar usable by the estimators: `f32` or `f64`.
pub trait Real:
    nalgebra::RealField
    + Copy
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Debug
    + Display
    + Send
    + Sync
    + serde::Serialize
    + serde::de::DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal into this scalar.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    /// Lossy widening to `f64`.
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// A tolerance of at least `v`, never below 64 machine epsilons.
    fn tol(v: f64) -> Self {
        let floor = Self::default_epsilon() * Self::lit(64.0);
        Self::lit(v).max(floor)
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Two-sided 97.5% standard normal quantile used for Wald intervals.
pub const Z_975: f64 = 1.959964;

/// Sample mean.
pub fn mean<T: Real>(xs: &[T]) -> T {
    let mut s = T::zero();
    for &x in xs {
        s += x;
    }
    s / T::from_usize_lossy(xs.len())
}

/// Sample standard deviation with an `n - 1` denominator.
pub fn sample_sd<T: Real>(xs: &[T]) -> T {
    let m = mean(xs);
    let mut ss = T::zero();
    for &x in xs {
        ss += (x - m) * (x - m);
    }
    (ss / T::from_usize_lossy(xs.len().saturating_sub(1).max(1))).sqrt()
}

/// Quantile with linear interpolation between order statistics (type 7).
/// `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
