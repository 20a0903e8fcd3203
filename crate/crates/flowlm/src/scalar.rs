//! Scalar abstraction for the numeric engine.
//!
//! Everything numeric in this crate is generic over [`Scalar`], which is any
//! IEEE float with the `num-traits` surface we rely on. Concrete aliases for
//! the default double-precision instantiation live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point scalar usable by the engine.
pub trait Scalar:
    Float + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    /// Conversion from `f64` (exact for `f64`, rounded for `f32`).
    fn of_f64(v: f64) -> Self;

    /// Widening conversion to `f64`.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Numerically stable sigmoid, exact at the tails.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_midpoint_and_tails() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(800.0f64) <= 1.0 && sigmoid(800.0f64) > 0.999);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(-800.0f64) < 1e-10);
    }

    #[test]
    fn sigmoid_generic_over_f32() {
        let y: f32 = sigmoid(-1.5f32);
        assert!((y - 0.182_425_52).abs() < 1e-6);
    }
}
