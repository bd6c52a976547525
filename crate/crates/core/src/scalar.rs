//! Scalar abstraction shared by the deterministic numerics.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the integrator, the Bloch equations and the
/// pulse search. Implemented for `f32` and `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn two_pi() -> Self {
        Self::TAU()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Reduces an angle into `[0, 2π)`.
pub fn wrap_phase<T: Real>(phi: T) -> T {
    let tau = T::two_pi();
    let r = phi % tau;
    let r = if r < T::zero() { r + tau } else { r };
    // `r + tau` can round up to exactly tau for tiny negative inputs.
    if r >= tau {
        T::zero()
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_phase_range() {
        for &x in &[-1e-300, -7.0, 0.0, 3.0, std::f64::consts::TAU, 100.0, -1e-17] {
            let w = wrap_phase(x);
            assert!((0.0..std::f64::consts::TAU).contains(&w), "{x} -> {w}");
        }
        assert!((wrap_phase(-0.5f32) - (std::f32::consts::TAU - 0.5)).abs() < 1e-6);
    }
}
