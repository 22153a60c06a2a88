//! Scalar abstraction for the numeric parts of the router.
//!
//! Feature vectors, class probabilities, the online learner and the queue's
//! entropy ranking are generic over any [`Scalar`]. `f32` and `f64` are
//! supported; the crate root exposes `f64` aliases for everyday use.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar: f32 or f64.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; panics only for non-representable
    /// values, which cannot happen for the float types implementing this.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Tolerance used for the probability simplex check: `1e-9`, widened to
    /// a few ulps per class for low-precision types.
    fn simplex_tolerance(k: usize) -> f64 {
        let eps = Self::epsilon().as_f64();
        (8.0 * k.max(1) as f64 * eps).max(1e-9)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
