//! State discrimination by selection rules: with σ+ light on an F′ = F
//! manifold only |0⟩ is excited, each scatter pumps the atom into the dark
//! state |1⟩ with probability `q_dark`, and the photon count ends the
//! measurement after a few events instead of requiring phase-locked pulses.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvmodels::{self, MeasurementModel};
use crate::pulses::PulseDesign;
use crate::rng;
use crate::scalar::wrap_phase;
use crate::timescales::TwoStateAmplitudes;
use crate::trajectories::{Mode, Terminal, TrajectoryRecord};

/// Equal Clebsch–Gordan coefficients into the two ground states.
pub const DEFAULT_Q_DARK: f64 = 0.5;
/// A branch that has not scattered after this many mean waiting times is
/// declared dark.
pub const DARK_TIMEOUT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionScheme {
    pub q_dark: f64,
    pub gamma2: f64,
    /// Two-state splitting in Hz.
    pub nu10: f64,
    /// Mean time between scatters from the bright state.
    pub tau_m: f64,
}

impl SelectionScheme {
    pub fn new(q_dark: f64, gamma2: f64, nu10: f64, tau_m: f64) -> Result<Self> {
        let s = Self { q_dark, gamma2, nu10, tau_m };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "selection::SelectionScheme";
        if !(self.q_dark > 0.0 && self.q_dark <= 1.0) {
            return Err(Error::invalid(OP, format!("q_dark = {} not in (0, 1]", self.q_dark)));
        }
        if !(self.tau_m > 0.0 && self.tau_m.is_finite()) {
            return Err(Error::invalid(OP, "tau_m must be positive"));
        }
        if !(self.nu10 >= 0.0 && self.nu10.is_finite() && self.gamma2 >= 0.0) {
            return Err(Error::invalid(OP, "nu10 and gamma2 must be non-negative"));
        }
        Ok(())
    }

    pub fn tau_phi(&self) -> f64 {
        1.0 / self.nu10
    }
}

/// Photon-count law of one measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonCounts {
    pub q: f64,
    /// Atom starts in the dark state: no photons.
    pub dark: bool,
}

impl PhotonCounts {
    pub fn pmf(&self, n: u64) -> f64 {
        if self.dark {
            return if n == 0 { 1.0 } else { 0.0 };
        }
        if n == 0 {
            return 0.0;
        }
        self.q * (1.0 - self.q).powi((n - 1) as i32)
    }

    pub fn mean(&self) -> f64 {
        if self.dark {
            0.0
        } else {
            1.0 / self.q
        }
    }

    pub fn variance(&self) -> f64 {
        if self.dark {
            0.0
        } else {
            (1.0 - self.q) / (self.q * self.q)
        }
    }

    /// Probability of still being bright after `n` scatters, `(1−q)ⁿ`.
    pub fn bright_after(&self, n: u64) -> f64 {
        if self.dark {
            0.0
        } else {
            (1.0 - self.q).powi(n as i32)
        }
    }
}

/// Count law for an atom starting bright (`bright = true`) or dark.
pub fn photon_count_distribution(scheme: &SelectionScheme, bright: bool) -> Result<PhotonCounts> {
    scheme.validate()?;
    Ok(PhotonCounts { q: scheme.q_dark, dark: !bright })
}

/// Draws one photon count from the bright state.
pub fn sample_photon_count<R: Rng + ?Sized>(q: f64, rng: &mut R) -> u64 {
    let mut n = 1;
    while rng.random::<f64>() >= q {
        n += 1;
    }
    n
}

/// One selection-rule measurement. The first-scatter time is exponential
/// with mean `tau_m`; the outcome is drawn from `model` at the two-state phase
/// at that instant. Outcome 0 (bright) scatters a geometric number of photons
/// at exponential intervals; outcome 1 stays dark until the timeout.
pub fn discrimination_outcome<R: Rng + ?Sized>(
    state0: &TwoStateAmplitudes<f64>,
    scheme: &SelectionScheme,
    model: &MeasurementModel,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    scheme.validate()?;
    model.validate()?;
    let (alpha2, _) = state0.populations();
    let t = rng::exponential(rng, scheme.tau_m);
    let phi = wrap_phase(state0.phi() + TAU * scheme.nu10 * t);
    let outcome = hvmodels::sample_at(alpha2, phi, model, rng);
    let mut rec = TrajectoryRecord {
        seed: 0,
        stream: 0,
        mode: Mode::Selection,
        jump_times: Vec::new(),
        phase_at_jump: Vec::new(),
        n_photons: 0,
        terminal: Terminal::Dark1,
        decision_time: Some(t),
        decision_phase: Some(phi),
        outcome: Some(outcome),
    };
    if outcome == 0 {
        let n = sample_photon_count(scheme.q_dark, rng);
        let mut now = t;
        for k in 0..n {
            if k > 0 {
                now += rng::exponential(rng, scheme.tau_m);
            }
            rec.jump_times.push(now);
            rec.phase_at_jump.push(wrap_phase(state0.phi() + TAU * scheme.nu10 * now));
        }
        rec.n_photons = n;
        rec.terminal = Terminal::PumpedDark;
    } else {
        rec.decision_time = Some(DARK_TIMEOUT * scheme.tau_m);
    }
    Ok(rec)
}

/// `n` measurements on streams `0..n` of `seed`.
pub fn run_selection(
    state0: &TwoStateAmplitudes<f64>,
    scheme: &SelectionScheme,
    model: &MeasurementModel,
    seed: u64,
    n: u64,
) -> Result<Vec<TrajectoryRecord>> {
    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, k);
            let mut rec = discrimination_outcome(state0, scheme, model, &mut r)?;
            rec.seed = seed;
            rec.stream = k;
            Ok(rec)
        })
        .collect()
}

/// Circular concentration of the first-scatter phase for exponential waiting
/// times, `R = 1/sqrt(1 + (2π τ_m/τ_φ)²)`.
pub fn first_scatter_concentration(tau_m: f64, tau_phi: f64) -> f64 {
    1.0 / (1.0 + (TAU * tau_m / tau_phi).powi(2)).sqrt()
}

/// One row of [`scheme_compare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    /// `None` on a closed transition, where scattering never stops.
    pub photons_per_measurement: Option<f64>,
    /// Pulses (pulsed) or scatters (selection) per measurement.
    pub events_per_measurement: f64,
    /// Expected model time to a measurement.
    pub time_per_measurement: f64,
    pub phase_concentration_r: f64,
    pub tau_phi: f64,
    pub phase_specific: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pulsed: SchemeSummary,
    pub selection: SchemeSummary,
}

/// Phase concentration below which measurement is not called phase-specific.
pub const PHASE_SPECIFIC_R: f64 = 0.5;

/// Tabulates the pulsed closed-transition scheme against selection rules.
/// `pulsed_r` is the pulsed design's phase concentration (from
/// [`pulse_concentration`] or a trajectory ensemble).
pub fn scheme_compare(pulsed: &PulseDesign<f64>, pulsed_r: f64, selection: &SelectionScheme) -> Result<Comparison> {
    const OP: &str = "selection::scheme_compare";
    selection.validate()?;
    if !(pulsed.p_scatter > 0.0) {
        return Err(Error::invalid(OP, "pulsed design has zero scatter probability"));
    }
    let n_pulses = 1.0 / pulsed.p_scatter;
    let pulsed_tau_phi = TAU / pulsed.base.omega_10;
    let r_sel = first_scatter_concentration(selection.tau_m, selection.tau_phi());
    Ok(Comparison {
        pulsed: SchemeSummary {
            scheme: "pulsed".into(),
            photons_per_measurement: None,
            events_per_measurement: n_pulses,
            time_per_measurement: n_pulses * pulsed.period(),
            phase_concentration_r: pulsed_r,
            tau_phi: pulsed_tau_phi,
            phase_specific: pulsed_r > PHASE_SPECIFIC_R,
        },
        selection: SchemeSummary {
            scheme: "selection".into(),
            photons_per_measurement: Some(1.0 / selection.q_dark),
            events_per_measurement: 1.0 / selection.q_dark,
            time_per_measurement: selection.tau_m,
            phase_concentration_r: r_sel,
            tau_phi: selection.tau_phi(),
            phase_specific: r_sel > PHASE_SPECIFIC_R,
        },
    })
}

/// Phase concentration of single-pulse emissions for a design: the jump
/// intensity `Γ2·P2(s)` weights the two-state phase over one coherent cycle.
pub fn pulse_concentration(design: &PulseDesign<f64>, tol: f64) -> Result<f64> {
    use num_complex::Complex;
    let w = design.cycle_waveform(0).coherent();
    let z = Complex::new(0.0, 0.0);
    let evo = crate::bloch::evolve_pure([z, Complex::new(1.0, 0.0), z], &w, 0.0, design.period(), tol)?;
    let omega_10 = design.base.omega_10;
    let weight = evo.integrated_p2();
    if !(weight > 0.0) {
        return Err(Error::Degenerate { op: "selection::pulse_concentration", reason: "design never excites".into() });
    }
    // midpoint rule for ∫ P2 e^{iφ} ds
    let mut re = 0.0;
    let mut im = 0.0;
    let n = 4096;
    let dt = design.period() / n as f64;
    for k in 0..n {
        let s = (k as f64 + 0.5) * dt;
        let a = evo.amplitudes(s);
        let phi = a[1].arg() + omega_10 * s;
        re += a[2].norm_sqr() * phi.cos() * dt;
        im += a[2].norm_sqr() * phi.sin() * dt;
    }
    Ok(re.hypot(im) / weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn scheme(q: f64) -> SelectionScheme {
        SelectionScheme::new(q, 1.0, 1e4, 1e-8).unwrap()
    }

    #[test]
    fn half_pumping_gives_two_photons() {
        let d = photon_count_distribution(&scheme(0.5), true).unwrap();
        assert_eq!(d.mean(), 2.0);
        for n in 1..20 {
            assert!((d.pmf(n) - 0.5f64.powi(n as i32)).abs() < 1e-16);
        }
        // Σ n 2^{-n} = 2
        let s: f64 = (1..200).map(|n| n as f64 * d.pmf(n)).sum();
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn immediate_pumping() {
        let mut r = stream(1, 0);
        assert!((0..1000).all(|_| sample_photon_count(1.0, &mut r) == 1));
        let d = photon_count_distribution(&scheme(1.0), true).unwrap();
        assert_eq!(d.pmf(1), 1.0);
        assert_eq!(d.variance(), 0.0);
    }

    #[test]
    fn dark_start_has_no_photons() {
        let d = photon_count_distribution(&scheme(0.5), false).unwrap();
        assert_eq!(d.pmf(0), 1.0);
        assert_eq!(d.mean(), 0.0);
        let dark = TwoStateAmplitudes::new(0.0, 0.0).unwrap();
        let mut r = stream(2, 0);
        for _ in 0..1000 {
            let rec = discrimination_outcome(&dark, &scheme(0.5), &MeasurementModel::born(), &mut r).unwrap();
            assert_eq!(rec.n_photons, 0);
            assert_eq!(rec.terminal, Terminal::Dark1);
        }
    }

    #[test]
    fn quarter_pumping_mean() {
        let mut r = stream(3, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_photon_count(0.25, &mut r) as f64).sum::<f64>() / n as f64;
        let sigma = ((1.0 - 0.25) / 0.0625 / n as f64).sqrt();
        assert!((mean - 4.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn bright_fraction_decreases() {
        let d = photon_count_distribution(&scheme(0.5), true).unwrap();
        assert!((1..30).all(|n| d.bright_after(n) < d.bright_after(n - 1)));
    }

    #[test]
    fn q_out_of_range() {
        assert!(SelectionScheme::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(SelectionScheme::new(1.5, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn concentration_closed_form() {
        assert!(first_scatter_concentration(1e-8, 1e-4) > 0.999);
        let a = first_scatter_concentration(1e-6, 1e-4);
        let b = first_scatter_concentration(1e-7, 1e-4);
        let c = first_scatter_concentration(1e-8, 1e-4);
        assert!(a < b && b < c);
    }
}
