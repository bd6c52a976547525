//! Quantum-jump Monte Carlo of measurement events.
//!
//! Each trajectory first follows the bright branch (the |1⟩ component driven
//! on |1⟩↔|2⟩): its no-jump norm decays, and the first time it falls below a
//! uniform draw `r` is the candidate measurement time. The outcome model then
//! decides, from the two-state phase at that instant, whether the atom was
//! found in |1⟩ (photon emitted, the branch keeps scattering) or in |0⟩ (dark,
//! no events). Under the Born rule this reproduces the full unravelling
//! exactly, since the c0 branch never couples to the reservoir.
//!
//! Two-state phase: `φ(t) = arg c1(t) − arg c0_free(t) = arg c1(t) + ω10·t`,
//! including light shifts. After a jump the branch restarts in |1⟩ with the
//! phase of the emitted amplitude `c2`.

use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{DriveWaveform, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::hvmodels::{self, MeasurementModel};
use crate::propagator::{norm_sqr, CyclePropagator, Spinor, C64};
use crate::pulses::{corrected_modulation, PulseDesign};
use crate::rng::{self, Stream};
use crate::scalar::wrap_phase;
use crate::stats::{self, Circular, Histogram};
use crate::timescales::TwoStateAmplitudes;

/// Advisory ensemble size for phase statistics.
pub const MIN_RECORDS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Continuous,
    Pulsed,
    #[serde(rename = "abstract-two-level")]
    Abstract,
    Selection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    /// Found in |1⟩; the closed transition keeps scattering.
    #[serde(rename = "measured-1")]
    Measured1,
    /// Found in |0⟩; no photons.
    #[serde(rename = "dark-0")]
    Dark0,
    /// Selection scheme: scattered, then optically pumped into the dark state.
    PumpedDark,
    /// Selection scheme: found in the dark state |1⟩, no photons.
    #[serde(rename = "dark-1")]
    Dark1,
    /// No measurement within the observation horizon.
    Unmeasured,
}

/// Where the two-state phase is read once |2⟩ is populated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseReference {
    /// `arg c1`.
    #[default]
    C1Branch,
    /// `arg(c1 + c2)`: the excited amplitude projected back onto |1⟩.
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub stream: u64,
    pub mode: Mode,
    pub jump_times: Vec<f64>,
    pub phase_at_jump: Vec<f64>,
    pub n_photons: u64,
    pub terminal: Terminal,
    /// Time and phase at which the outcome was decided.
    pub decision_time: Option<f64>,
    pub decision_phase: Option<f64>,
    /// 0 for |0⟩, 1 for |1⟩.
    pub outcome: Option<u8>,
}

impl TrajectoryRecord {
    fn empty(seed: u64, stream: u64, mode: Mode, terminal: Terminal) -> Self {
        Self {
            seed,
            stream,
            mode,
            jump_times: Vec::new(),
            phase_at_jump: Vec::new(),
            n_photons: 0,
            terminal,
            decision_time: None,
            decision_phase: None,
            outcome: None,
        }
    }
}

/// Detection program for a trajectory.
#[derive(Debug, Clone)]
pub enum Detector {
    /// Measurement at rate `1/tau_m`, no optical dynamics.
    Abstract { tau_m: f64, omega_10: f64, horizon: f64 },
    Pulsed(Periodic),
    Continuous(Periodic),
}

/// A drive repeating every `span` up to a phase advance.
#[derive(Debug, Clone)]
pub struct Periodic {
    pub propagator: CyclePropagator,
    pub omega_10: f64,
    pub horizon_cycles: u64,
    pub reference: PhaseReference,
    /// Stop at the first recorded event.
    pub first_only: bool,
}

/// Options for a pulsed detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulsedOptions {
    pub horizon_cycles: u64,
    /// Shift the modulation frequency to cancel the per-cycle light shift.
    #[serde(default)]
    pub stark_corrected: bool,
    #[serde(default)]
    pub reference: PhaseReference,
    #[serde(default)]
    pub first_only: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

/// Options for a continuous detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousOptions {
    /// Observation window.
    pub horizon: f64,
    /// Propagator segment length; defaults to a sixteenth of `min(τ_φ, 1/Γ2)`.
    #[serde(default)]
    pub segment: Option<f64>,
    #[serde(default)]
    pub reference: PhaseReference,
    #[serde(default)]
    pub first_only: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

/// Steady-state excited population of a driven closed transition.
pub fn steady_state_p2(delta: f64, omega_r: f64, gamma2: f64) -> f64 {
    let w2 = omega_r * omega_r;
    (w2 / 4.0) / (delta * delta + gamma2 * gamma2 / 4.0 + w2 / 2.0)
}

/// Resonant continuous drive whose mean scatter time `1/(Γ2·P2)` equals the
/// two-state period `τ_φ`.
pub fn matched_continuous(omega_r: f64, gamma2: f64) -> DriveWaveform<f64> {
    let rate = gamma2 * steady_state_p2(0.0, omega_r, gamma2);
    DriveWaveform::constant(0.0, omega_r, gamma2, TAU * rate)
}

impl Detector {
    pub fn abstract_two_level(tau_m: f64, omega_10: f64, horizon: f64) -> Result<Self> {
        if !(tau_m > 0.0 && horizon > 0.0 && omega_10.is_finite()) {
            return Err(Error::invalid("trajectories::Detector", "tau_m and horizon must be positive"));
        }
        Ok(Detector::Abstract { tau_m, omega_10, horizon })
    }

    pub fn pulsed(design: &PulseDesign<f64>, opts: &PulsedOptions) -> Result<Self> {
        const OP: &str = "trajectories::Detector::pulsed";
        if opts.horizon_cycles == 0 {
            return Err(Error::invalid(OP, "horizon_cycles must be positive"));
        }
        let mut design = design.clone();
        if opts.stark_corrected {
            let c = corrected_modulation(&design.base, design.stark_per_cycle, design.base.nu_10())?;
            design.base.omega_mod = TAU * c.nu_mod_corrected;
            design.jump_time = design.period() / 2.0;
        }
        let cycle = design.cycle_waveform(0);
        let propagator = CyclePropagator::new(&cycle, design.period(), opts.tol)?;
        Ok(Detector::Pulsed(Periodic {
            propagator,
            omega_10: design.base.omega_10,
            horizon_cycles: opts.horizon_cycles,
            reference: opts.reference,
            first_only: opts.first_only,
        }))
    }

    pub fn continuous(waveform: &DriveWaveform<f64>, opts: &ContinuousOptions) -> Result<Self> {
        const OP: &str = "trajectories::Detector::continuous";
        if waveform.omega_mod != 0.0 || !waveform.jump_schedule.is_empty() {
            return Err(Error::invalid(OP, "continuous detection needs a constant, jump-free drive"));
        }
        if !(opts.horizon > 0.0) {
            return Err(Error::invalid(OP, "horizon must be positive"));
        }
        let segment = match opts.segment {
            Some(s) => s,
            None => {
                let tau_phi = if waveform.omega_10 > 0.0 { TAU / waveform.omega_10 } else { f64::INFINITY };
                let tau_g = if waveform.gamma2 > 0.0 { 1.0 / waveform.gamma2 } else { f64::INFINITY };
                let base = tau_phi.min(tau_g);
                if !base.is_finite() {
                    return Err(Error::invalid(OP, "set `segment` when both ω10 and Γ2 vanish"));
                }
                base / 16.0
            }
        };
        let propagator = CyclePropagator::new(waveform, segment, opts.tol)?;
        let cycles = (opts.horizon / segment).ceil() as u64;
        Ok(Detector::Continuous(Periodic {
            propagator,
            omega_10: waveform.omega_10,
            horizon_cycles: cycles.max(1),
            reference: opts.reference,
            first_only: opts.first_only,
        }))
    }

    pub fn mode(&self) -> Mode {
        match self {
            Detector::Abstract { .. } => Mode::Abstract,
            Detector::Pulsed(_) => Mode::Pulsed,
            Detector::Continuous(_) => Mode::Continuous,
        }
    }

    /// Cycle length for periodic detectors.
    pub fn span(&self) -> Option<f64> {
        match self {
            Detector::Abstract { .. } => None,
            Detector::Pulsed(p) | Detector::Continuous(p) => Some(p.propagator.span()),
        }
    }
}

/// One trajectory on stream `stream` of `seed`.
pub fn run_trajectory(
    state0: &TwoStateAmplitudes<f64>,
    detector: &Detector,
    model: &MeasurementModel,
    seed: u64,
    stream: u64,
) -> Result<TrajectoryRecord> {
    model.validate()?;
    let mut rng = rng::stream(seed, stream);
    let mode = detector.mode();
    let (alpha2, _) = state0.populations();
    if alpha2 >= 1.0 {
        // nothing couples to the reservoir
        return Ok(TrajectoryRecord { outcome: Some(0), ..TrajectoryRecord::empty(seed, stream, mode, Terminal::Dark0) });
    }
    match detector {
        Detector::Abstract { tau_m, omega_10, horizon } => {
            let t = rng::exponential(&mut rng, *tau_m);
            let mut rec = TrajectoryRecord::empty(seed, stream, mode, Terminal::Unmeasured);
            if t > *horizon {
                return Ok(rec);
            }
            let phi = wrap_phase(state0.phi() + omega_10 * t);
            let outcome = hvmodels::sample_at(alpha2, phi, model, &mut rng);
            rec.decision_time = Some(t);
            rec.decision_phase = Some(phi);
            rec.outcome = Some(outcome);
            if outcome == 1 {
                rec.jump_times.push(t);
                rec.phase_at_jump.push(phi);
                rec.n_photons = 1;
                rec.terminal = Terminal::Measured1;
            } else {
                rec.terminal = Terminal::Dark0;
            }
            Ok(rec)
        }
        Detector::Pulsed(p) | Detector::Continuous(p) => Ok(run_periodic(state0, alpha2, p, model, mode, seed, stream, &mut rng)),
    }
}

fn reference_phase(reference: PhaseReference, c1: C64, c2: C64, omega_10: f64, t: f64) -> f64 {
    let a = match reference {
        PhaseReference::C1Branch => c1.arg(),
        PhaseReference::Projected => (c1 + c2).arg(),
    };
    wrap_phase(a + omega_10 * t)
}

#[allow(clippy::too_many_arguments)]
fn run_periodic(
    state0: &TwoStateAmplitudes<f64>,
    alpha2: f64,
    p: &Periodic,
    model: &MeasurementModel,
    mode: Mode,
    seed: u64,
    stream: u64,
    rng: &mut Stream,
) -> TrajectoryRecord {
    let prop = &p.propagator;
    let span = prop.span();
    let mut rec = TrajectoryRecord::empty(seed, stream, mode, Terminal::Unmeasured);
    // primed bright-branch vector at the start of the current cycle
    let mut v: Spinor = [C64::from_polar(1.0, state0.phi()), C64::new(0.0, 0.0)];
    let mut r = rng::open_unit(rng);
    let mut chi = 0.0;
    let mut lo = 0.0;
    for n in 0..p.horizon_cycles {
        loop {
            // the boundary phase does not change the norm
            if norm_sqr(&prop.next_cycle(&v)) > r {
                break;
            }
            let s = prop.first_passage(&v, r, lo);
            let t = n as f64 * span + s;
            let a = prop.apply(s, &v);
            let c2 = a[1] * C64::from_polar(1.0, -chi);
            let phi = reference_phase(p.reference, a[0], c2, p.omega_10, t);
            if rec.outcome.is_none() {
                let outcome = hvmodels::sample_at(alpha2, phi, model, rng);
                rec.decision_time = Some(t);
                rec.decision_phase = Some(phi);
                rec.outcome = Some(outcome);
                if outcome == 0 {
                    rec.terminal = Terminal::Dark0;
                    return rec;
                }
                rec.terminal = Terminal::Measured1;
            }
            rec.jump_times.push(t);
            rec.phase_at_jump.push(phi);
            rec.n_photons += 1;
            if p.first_only {
                return rec;
            }
            // L = |1⟩⟨2|: restart in |1⟩ with the emitted amplitude's phase
            let restart = [C64::from_polar(1.0, c2.arg()), C64::new(0.0, 0.0)];
            v = prop.solve(s, &restart);
            r = rng::open_unit(rng);
            lo = s;
        }
        v = prop.next_cycle(&v);
        chi = wrap_phase(chi + prop.advance());
        lo = 0.0;
    }
    rec
}

/// `n` trajectories on streams `0..n`, in stream order regardless of
/// scheduling.
pub fn run_ensemble(
    state0: &TwoStateAmplitudes<f64>,
    detector: &Detector,
    model: &MeasurementModel,
    seed: u64,
    n: u64,
) -> Result<Vec<TrajectoryRecord>> {
    (0..n).into_par_iter().map(|k| run_trajectory(state0, detector, model, seed, k)).collect()
}

/// Ensemble summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub phase_histogram: Histogram,
    /// Time to the first recorded event.
    pub waiting_histogram: Histogram,
    pub concentration: Circular,
    pub n_records: usize,
    pub n_jumps: usize,
    /// Fewer than [`MIN_RECORDS`] records.
    pub small_sample: bool,
}

/// Circular histogram and concentration of every recorded jump phase.
pub fn phase_selectivity(records: &[TrajectoryRecord], bins: usize) -> Result<EnsembleStats> {
    const OP: &str = "trajectories::phase_selectivity";
    let phases: Vec<f64> = records.iter().flat_map(|r| r.phase_at_jump.iter().copied()).collect();
    let Some(concentration) = stats::circular(&phases) else {
        return Err(Error::invalid(OP, "ensemble has no recorded jumps"));
    };
    let mut phase_histogram = Histogram::phase(bins)?;
    phase_histogram.extend(phases.iter().copied());
    let firsts: Vec<f64> = records.iter().filter_map(|r| r.jump_times.first().copied()).collect();
    let t_max = firsts.iter().copied().fold(0.0, f64::max);
    let mut waiting_histogram = Histogram::new(0.0, if t_max > 0.0 { t_max * (1.0 + 1e-12) } else { 1.0 }, bins)?;
    waiting_histogram.extend(firsts);
    Ok(EnsembleStats {
        phase_histogram,
        waiting_histogram,
        concentration,
        n_records: records.len(),
        n_jumps: phases.len(),
        small_sample: records.len() < MIN_RECORDS,
    })
}

/// Fraction of all jumps whose time within the cycle lies in `[start, end]`.
pub fn window_fraction(records: &[TrajectoryRecord], period: f64, window: (f64, f64)) -> Option<f64> {
    let (mut inside, mut total) = (0u64, 0u64);
    for t in records.iter().flat_map(|r| r.jump_times.iter()) {
        let s = t.rem_euclid(period);
        total += 1;
        if s >= window.0 && s <= window.1 {
            inside += 1;
        }
    }
    (total > 0).then(|| inside as f64 / total as f64)
}

/// Empirical survival after `n` pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub n: u64,
    pub survival: f64,
    /// 95% Wilson interval.
    pub lo: f64,
    pub hi: f64,
}

/// `P(no measurement during pulses 0..n)` for `n` in `ns`.
pub fn survival_curve(records: &[TrajectoryRecord], period: f64, ns: &[u64]) -> Result<Vec<SurvivalPoint>> {
    const OP: &str = "trajectories::survival_curve";
    if records.iter().any(|r| r.mode != Mode::Pulsed) {
        return Err(Error::invalid(OP, "survival curves need pulsed records"));
    }
    let firsts: Vec<Option<u64>> =
        records.iter().map(|r| r.jump_times.first().map(|t| (t / period).floor() as u64)).collect();
    let total = records.len() as u64;
    let z = stats::normal_quantile(0.975);
    Ok(ns
        .iter()
        .map(|&n| {
            let alive = firsts.iter().filter(|f| f.is_none_or(|c| c >= n)).count() as u64;
            let (lo, hi) = stats::wilson_interval(alive, total, z);
            let survival = if total == 0 { 1.0 } else { alive as f64 / total as f64 };
            SurvivalPoint { n, survival, lo, hi }
        })
        .collect())
}

/// Mean number of photons emitted up to time `t`.
pub fn mean_photons_at(records: &[TrajectoryRecord], t: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let total: usize = records.iter().map(|r| r.jump_times.partition_point(|&x| x <= t)).sum();
    total as f64 / records.len() as f64
}

/// Phase-tagged outcomes for the detection statistics.
pub fn tagged_outcomes(records: &[TrajectoryRecord]) -> Vec<hvmodels::PhaseTaggedOutcome> {
    records
        .iter()
        .filter_map(|r| match (r.decision_phase, r.outcome) {
            (Some(phi), Some(o)) => Some(hvmodels::PhaseTaggedOutcome::new(phi, o)),
            _ => None,
        })
        .collect()
}

pub fn write_jsonl<W: Write>(out: &mut W, records: &[TrajectoryRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> TwoStateAmplitudes<f64> {
        TwoStateAmplitudes::new(0.0, 0.0).unwrap()
    }

    #[test]
    fn ground_zero_never_jumps() {
        let d = Detector::abstract_two_level(1.0, 10.0, 100.0).unwrap();
        let s = TwoStateAmplitudes::new(1.0, 0.3).unwrap();
        let w = matched_continuous(1.0, 1.0);
        let c = Detector::continuous(&w, &ContinuousOptions { horizon: 50.0, segment: None, reference: PhaseReference::C1Branch, first_only: false, tol: 1e-9 }).unwrap();
        for det in [&d, &c] {
            for k in 0..20 {
                let r = run_trajectory(&s, det, &MeasurementModel::born(), 1, k).unwrap();
                assert!(r.jump_times.is_empty());
                assert_eq!(r.terminal, Terminal::Dark0);
            }
        }
    }

    #[test]
    fn same_seed_same_record() {
        let w = matched_continuous(1.0, 1.0);
        let c = Detector::continuous(&w, &ContinuousOptions { horizon: 30.0, segment: None, reference: PhaseReference::C1Branch, first_only: false, tol: 1e-9 }).unwrap();
        let s = TwoStateAmplitudes::balanced(0.4);
        let a = run_trajectory(&s, &c, &MeasurementModel::born(), 9, 17).unwrap();
        let b = run_trajectory(&s, &c, &MeasurementModel::born(), 9, 17).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let e1 = run_ensemble(&s, &c, &MeasurementModel::born(), 9, 64).unwrap();
        let e2 = run_ensemble(&s, &c, &MeasurementModel::born(), 9, 64).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1[17], a);
    }

    #[test]
    fn records_are_well_formed() {
        let w = matched_continuous(1.0, 1.0);
        let c = Detector::continuous(&w, &ContinuousOptions { horizon: 40.0, segment: None, reference: PhaseReference::C1Branch, first_only: false, tol: 1e-9 }).unwrap();
        for r in run_ensemble(&one(), &c, &MeasurementModel::born(), 2, 50).unwrap() {
            assert!(r.jump_times.windows(2).all(|p| p[1] > p[0]));
            assert!(r.phase_at_jump.iter().all(|p| (0.0..TAU).contains(p)));
            assert_eq!(r.n_photons as usize, r.jump_times.len());
        }
    }

    #[test]
    fn single_record_is_concentrated() {
        let d = Detector::abstract_two_level(1.0, 10.0, 100.0).unwrap();
        let r = run_trajectory(&one(), &d, &MeasurementModel::born(), 3, 0).unwrap();
        let s = phase_selectivity(&[r], 8).unwrap();
        assert_eq!(s.concentration.resultant, 1.0);
        assert!(s.small_sample);
        assert!(phase_selectivity(&[], 8).is_err());
    }

    #[test]
    fn matched_drive_has_equal_timescales() {
        let w = matched_continuous(1.0, 1.0);
        let tau_m = 1.0 / (w.gamma2 * steady_state_p2(0.0, 1.0, 1.0));
        assert!((tau_m - TAU / w.omega_10).abs() < 1e-12);
        assert!((steady_state_p2(0.0, 1.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
    }
}
