//! Floating-point scalar abstraction shared by the autodiff engine and models.
//!
//! Training runs in `f32`; gradient checks rebuild the same graph in `f64`.

use core::fmt::Debug;

use num_traits::{Float, NumAssign};

/// Scalar type usable as tensor element.
pub trait Real: Float + NumAssign + Default + Debug + Send + Sync + 'static {
    /// Lossy conversion from `f64`.
    fn of(v: f64) -> Self;
    /// Widening (or identity) conversion to `f64`.
    fn as_f64(self) -> f64;

    #[inline]
    fn of_f32(v: f32) -> Self {
        Self::of(v as f64)
    }

    // `Float::exp` and friends call the platform math library whenever any
    // crate in the build enables `num-traits/std`; these always use `libm`.
    fn exp_m(self) -> Self;
    fn ln_m(self) -> Self;
    fn tanh_m(self) -> Self;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn of_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn exp_m(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn ln_m(self) -> Self {
        libm::logf(self)
    }
    #[inline]
    fn tanh_m(self) -> Self {
        libm::tanhf(self)
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn exp_m(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln_m(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn tanh_m(self) -> Self {
        libm::tanh(self)
    }
}
