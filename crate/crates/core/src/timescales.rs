//! Two-state parametrization, timescale bookkeeping and the Fourier-limit
//! phase accumulation.
//!
//! Units here are whatever the caller uses consistently (SI at the CLI
//! boundary, Γ2-scaled inside the Bloch integration).

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wrap_phase, Real};

/// Bohr magneton over Planck's constant, in Hz per gauss.
pub const BOHR_MAGNETON_HZ_PER_GAUSS: f64 = 1.399_624e6;

/// Default ratio below which one timescale counts as "much less" than another.
pub const DEFAULT_MUCH_LESS: f64 = 0.01;

/// `α|0⟩ + e^{iφ}√(1−α²)|1⟩`.
///
/// `phi` is kept unwrapped (cumulative radians); [`phase_mod`](Self::phase_mod)
/// gives the reduced view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStateAmplitudes<T> {
    alpha: T,
    phi: T,
}

impl<T: Real> TwoStateAmplitudes<T> {
    pub fn new(alpha: T, phi: T) -> Result<Self> {
        if !alpha.is_finite() || alpha < T::zero() || alpha > T::one() {
            return Err(Error::invalid("core::TwoStateAmplitudes", format!("alpha = {alpha} not in [0, 1]")));
        }
        if !phi.is_finite() {
            return Err(Error::invalid("core::TwoStateAmplitudes", "phi is not finite"));
        }
        Ok(Self { alpha, phi })
    }

    /// Equal superposition with the given phase.
    pub fn balanced(phi: T) -> Self {
        Self { alpha: T::FRAC_1_SQRT_2(), phi }
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Unwrapped relative phase.
    pub fn phi(&self) -> T {
        self.phi
    }

    /// Relative phase reduced to `[0, 2π)`.
    pub fn phase_mod(&self) -> T {
        wrap_phase(self.phi)
    }

    /// Born populations `(α², 1−α²)`.
    pub fn populations(&self) -> (T, T) {
        let p0 = self.alpha * self.alpha;
        (p0, T::one() - p0)
    }

    /// Free evolution for a time `t` at splitting `nu10`.
    pub fn evolve(&self, nu10: T, t: T) -> Self {
        Self { alpha: self.alpha, phi: self.phi + T::two_pi() * nu10 * t }
    }

    /// Complex amplitudes `(c0, c1)`.
    pub fn amplitudes(&self) -> (Complex<T>, Complex<T>) {
        let beta = (T::one() - self.alpha * self.alpha).max(T::zero()).sqrt();
        (Complex::new(self.alpha, T::zero()), Complex::from_polar(beta, self.phi))
    }
}

/// Timescales of the abstract measurement model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimescaleParams<T> {
    /// Two-state splitting frequency.
    pub nu10: T,
    /// Mean measurement time.
    pub tau_m: T,
    /// Reservoir correlation time.
    pub tau_c: T,
    /// Damping rate of |1⟩ in the abstract two-level model.
    pub gamma1: T,
}

impl<T: Real> TimescaleParams<T> {
    /// Builds the parameter set with `gamma1 = 1/tau_m`.
    pub fn new(nu10: T, tau_m: T, tau_c: T) -> Self {
        Self { nu10, tau_m, tau_c, gamma1: tau_m.recip() }
    }

    /// Builds the parameter set from a phase period instead of a frequency.
    pub fn from_periods(tau_phi: T, tau_m: T, tau_c: T) -> Self {
        Self::new(tau_phi.recip(), tau_m, tau_c)
    }

    /// Phase period `1/ν10`.
    pub fn tau_phi(&self) -> T {
        self.nu10.recip()
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        for (name, v) in [("nu10", self.nu10), ("tau_m", self.tau_m), ("tau_c", self.tau_c), ("gamma1", self.gamma1)] {
            if !(v.is_finite() && v > T::zero()) {
                return Err(Error::invalid(op, format!("{name} = {v} must be positive and finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants<T> {
    /// μB/h in Hz per gauss.
    pub bohr_magneton_over_h: T,
    pub lande_g: T,
    /// Magnetic field in gauss.
    pub b_field: T,
}

impl<T: Real> PhysicalConstants<T> {
    pub fn new(lande_g: T, b_field: T) -> Self {
        Self { bohr_magneton_over_h: T::lit(BOHR_MAGNETON_HZ_PER_GAUSS), lande_g, b_field }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseAccumulation<T> {
    pub radians: T,
    /// Whether the duration reaches the Fourier limit `Δt ≥ 1/Δν`.
    pub fourier_limited: bool,
}

/// Phase accrued by a superposition with splitting `delta_nu` over `delta_t`:
/// `2π·Δν·Δt`.
pub fn accumulated_phase<T: Real>(delta_nu: T, delta_t: T) -> Result<PhaseAccumulation<T>> {
    const OP: &str = "core::accumulated_phase";
    if !delta_nu.is_finite() || !delta_t.is_finite() {
        return Err(Error::invalid(OP, "non-finite input"));
    }
    if delta_nu <= T::zero() {
        return Err(Error::invalid(OP, format!("delta_nu = {delta_nu} must be positive")));
    }
    if delta_t < T::zero() {
        return Err(Error::invalid(OP, format!("delta_t = {delta_t} must be non-negative")));
    }
    let cycles = delta_nu * delta_t;
    Ok(PhaseAccumulation {
        radians: T::two_pi() * cycles,
        fourier_limited: cycles >= T::one() - T::lit(4.0) * T::epsilon(),
    })
}

/// Zeeman splitting `g·(μB/h)·B`, in Hz.
pub fn zeeman_splitting<T: Real>(constants: &PhysicalConstants<T>) -> Result<T> {
    const OP: &str = "core::zeeman_splitting";
    let PhysicalConstants { bohr_magneton_over_h, lande_g, b_field } = *constants;
    if !(b_field.is_finite() && lande_g.is_finite() && bohr_magneton_over_h.is_finite()) {
        return Err(Error::invalid(OP, "non-finite input"));
    }
    if b_field < T::zero() {
        return Err(Error::invalid(OP, format!("b_field = {b_field} G is negative")));
    }
    Ok(lande_g * bohr_magneton_over_h * b_field)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimescaleVerdict<T> {
    /// `τ_c / τ_m`.
    pub markov_ratio: T,
    /// `τ_m / τ_φ`.
    pub phase_ratio: T,
    /// `τ_c ≪ τ_m`.
    pub markov: bool,
    /// `τ_m ≪ τ_φ`: measurement can be imposed at a specific phase.
    pub phase_specific: bool,
}

/// Orders the three timescales using `much_less` as the "≪" ratio.
pub fn timescale_verdict<T: Real>(params: &TimescaleParams<T>, much_less: T) -> Result<TimescaleVerdict<T>> {
    const OP: &str = "core::timescale_verdict";
    params.validate(OP)?;
    if !(much_less > T::zero() && much_less < T::one()) {
        return Err(Error::invalid(OP, format!("threshold {much_less} not in (0, 1)")));
    }
    let tau_phi = params.tau_phi();
    Ok(TimescaleVerdict {
        markov_ratio: params.tau_c / params.tau_m,
        phase_ratio: params.tau_m / tau_phi,
        markov: params.tau_c <= much_less * params.tau_m,
        phase_specific: params.tau_m <= much_less * tau_phi,
    })
}
