//! Scalar abstraction shared by every numerical module.
//!
//! All geometry, flow and verification code is written against [`Real`], which is
//! implemented for `f32` and `f64`. The FFT used by spectral differentiation is routed
//! through the trait so that generic code never has to name `rustfft`'s own numeric
//! bounds (which clash with `num_traits::Float` on method resolution).

use std::cell::RefCell;
use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar used throughout the crate.
pub trait Real:
    Float
    + FloatConst
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
    /// In-place forward DFT (no normalisation).
    fn fft_forward(buf: &mut [Complex<Self>]);
    /// In-place inverse DFT (no normalisation).
    fn fft_inverse(buf: &mut [Complex<Self>]);

    /// Converts an `f64` literal. Panics only if the value is not representable at all,
    /// which cannot happen for the finite constants used in this crate.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_real {
    ($t:ty, $planner:ident) => {
        thread_local! {
            static $planner: RefCell<FftPlanner<$t>> = RefCell::new(FftPlanner::new());
        }

        impl Real for $t {
            fn fft_forward(buf: &mut [Complex<Self>]) {
                let plan = $planner.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
                plan.process(buf);
            }

            fn fft_inverse(buf: &mut [Complex<Self>]) {
                let plan = $planner.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
                plan.process(buf);
            }
        }
    };
}

impl_real!(f32, PLANNER_F32);
impl_real!(f64, PLANNER_F64);

/// Shorthand for [`Real::lit`].
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::lit(x)
}

/// Plane point / vector.
pub type Point<T> = [T; 2];

#[inline]
pub(crate) fn dot<T: Real>(a: Point<T>, b: Point<T>) -> T {
    a[0] * b[0] + a[1] * b[1]
}
