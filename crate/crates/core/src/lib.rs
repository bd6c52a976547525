//! Simulation and analysis toolkit for phase-specific quantum measurement on
//! a driven three-level atom.
//!
//! * [`timescales`]: two-state parametrization, timescale ordering, Zeeman
//!   splitting and the Fourier-limit phase accumulation.
//! * [`bloch`]: optical Bloch equations under a frequency-modulated drive.
//! * [`pulses`]: turning a resonant interval into a measurement pulse.
//! * [`trajectories`]: quantum-jump Monte Carlo of measurement events.
//! * [`hvmodels`]: Born rule versus phase-dependent outcome models and the
//!   detection statistics.
//! * [`selection`]: state discrimination by selection rules.
//!
//! The deterministic numerics are generic over [`Real`] (`f32`/`f64`); the
//! aliases below fix the scalar.

// negated comparisons reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bloch;
pub mod error;
pub mod hvmodels;
pub mod ode;
pub mod propagator;
pub mod pulses;
pub mod rng;
pub mod scalar;
pub mod selection;
pub mod stats;
pub mod timescales;
pub mod trajectories;

pub use error::{Error, OdeError, Result};
pub use scalar::Real;

pub type Amplitudes = timescales::TwoStateAmplitudes<f64>;
pub type Amplitudes32 = timescales::TwoStateAmplitudes<f32>;
pub type Timescales = timescales::TimescaleParams<f64>;
pub type Constants = timescales::PhysicalConstants<f64>;
pub type Waveform = bloch::DriveWaveform<f64>;
pub type Waveform32 = bloch::DriveWaveform<f32>;
pub type State = bloch::AtomState<f64>;
pub type State32 = bloch::AtomState<f32>;
pub type Series = bloch::TimeSeries<f64>;
pub type Series32 = bloch::TimeSeries<f32>;
pub type Design = pulses::PulseDesign<f64>;
pub type Design32 = pulses::PulseDesign<f32>;
