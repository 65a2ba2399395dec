//! Element type abstraction: training runs in `f32`, gradient verification
//! additionally runs every op in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

pub trait Scalar: Float + Debug + Display + Sum + Send + Sync + 'static {
    const NAME: &'static str;

    /// Absolute-scale floor used as the denominator guard when reporting
    /// relative gradient errors. Comparing two near-zero numbers relatively
    /// is meaningless below the precision's noise floor.
    const GRAD_DENOM_FLOOR: f64;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    const GRAD_DENOM_FLOOR: f64 = 1e-4;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    const GRAD_DENOM_FLOOR: f64 = 1e-8;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
