//! Measurement-pulse engineering: a drive-phase jump at resonance that undoes
//! the excitation of the first half of the resonant interval.

use std::io::Write;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::bloch::{self, DriveWaveform, PhaseJump};
use crate::error::{Error, Result};
use crate::scalar::{wrap_phase, Real};

/// Grid size of the coarse jump-phase scan.
pub const DEFAULT_GRID: usize = 64;
/// Per-pulse probability above which the weak-scatter picture is suspect.
pub const WEAK_SCATTER_LIMIT: f64 = 0.1;
/// Default jump-duration budget as a fraction of the two-state period.
pub const DEFAULT_EOM_FRACTION: f64 = 0.05;
/// Electro-optic phase-step duration (s).
pub const DEFAULT_EOM_DURATION: f64 = 1e-9;

/// Flags raised by the jump-phase search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchDiagnostics {
    /// More than one local minimum on the coarse grid.
    pub multimodal: bool,
    /// Residual population is flat in the jump phase (nothing is excited).
    pub degenerate: bool,
    pub evaluations: usize,
}

/// A frozen measurement-pulse design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseDesign<T> {
    /// Drive with the physical Γ2 and an empty jump schedule.
    pub base: DriveWaveform<T>,
    pub jump_phase: T,
    /// Jump instant within the cycle (the detuning minimum).
    pub jump_time: T,
    /// Excited population left at the end of a coherent cycle.
    pub residual_p2: T,
    /// Measurement probability per pulse.
    pub p_scatter: T,
    /// Light-shift phase lag of the two-state coherence per cycle.
    pub stark_per_cycle: T,
    #[serde(default)]
    pub diagnostics: SearchDiagnostics,
}

impl<T: Real> PulseDesign<T> {
    pub fn period(&self) -> T {
        self.base.period().expect("pulse designs are built from modulated waveforms")
    }

    /// The base drive with this design's jump for cycle `k` only.
    pub fn cycle_waveform(&self, k: usize) -> DriveWaveform<T> {
        let t = self.period() * T::from_usize(k).unwrap() + self.jump_time;
        let mut w = self.base.with_jumps(vec![PhaseJump { time: t, phase: self.jump_phase }]);
        w.n_cycles = 1;
        w
    }

    /// The base drive with a jump in each of `n_cycles` cycles.
    pub fn periodic_waveform(&self, n_cycles: usize) -> DriveWaveform<T> {
        let period = self.period();
        let jumps = (0..n_cycles)
            .map(|k| PhaseJump { time: period * T::from_usize(k).unwrap() + self.jump_time, phase: self.jump_phase })
            .collect();
        let mut w = self.base.with_jumps(jumps);
        w.n_cycles = n_cycles;
        w
    }

    /// Interval within a cycle where `δ(t) ≤ max_detuning`, as `(start, end)`.
    pub fn resonant_window(&self, max_detuning: T) -> (T, T) {
        let w = &self.base;
        let period = self.period();
        let c = (max_detuning / w.omega_off - T::one()).max(-T::one()).min(T::one());
        // cos(ω_mod t) ≤ c around t = T/2
        let half = (T::PI() - c.acos()) / w.omega_mod;
        let mid = period / T::lit(2.0);
        (mid - half, mid + half)
    }

    /// Resonant interval used for window statistics: where the detuning is
    /// below its cycle mean `ω_off`.
    pub fn default_window(&self) -> (T, T) {
        self.resonant_window(self.base.omega_off)
    }

    pub fn to_toml(&self) -> Result<String>
    where
        T: Serialize,
    {
        toml::to_string(self).map_err(|e| Error::Format { op: "pulses::PulseDesign::to_toml", reason: e.to_string() })
    }

    pub fn from_toml(text: &str) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        toml::from_str(text).map_err(|e| Error::Format { op: "pulses::PulseDesign::from_toml", reason: e.to_string() })
    }
}

/// Coherent single-cycle outcome for one jump phase.
#[derive(Debug, Clone, Copy)]
pub struct CycleOutcome<T> {
    pub residual_p2: T,
    pub c1_end: Complex<T>,
}

fn run_cycle<T: Real>(waveform: &DriveWaveform<T>, span: T, jump_time: T, theta: T, tol: T) -> Result<CycleOutcome<T>> {
    let w = waveform.coherent().with_jumps(vec![PhaseJump { time: jump_time, phase: theta }]);
    let z = Complex::new(T::zero(), T::zero());
    let evo = bloch::evolve_pure([z, Complex::new(T::one(), T::zero()), z], &w, T::zero(), span, tol)?;
    let end = evo.final_amplitudes();
    Ok(CycleOutcome { residual_p2: end[2].norm_sqr(), c1_end: end[1] })
}

/// Residual excited population at the end of `[0, span]` for a jump `theta`
/// at `jump_time`, starting from |1⟩ with Γ2 = 0.
pub fn residual_p2<T: Real>(waveform: &DriveWaveform<T>, span: T, jump_time: T, theta: T, tol: T) -> Result<T> {
    run_cycle(waveform, span, jump_time, theta, tol).map(|o| o.residual_p2)
}

/// Coarse scan of the residual over `n` evenly spaced jump phases.
pub fn landscape<T: Real>(waveform: &DriveWaveform<T>, span: T, jump_time: T, n: usize, tol: T) -> Result<Vec<(T, T)>> {
    (0..n)
        .map(|k| {
            let theta = T::two_pi() * T::from_usize(k).unwrap() / T::from_usize(n).unwrap();
            residual_p2(waveform, span, jump_time, theta, tol).map(|r| (theta, r))
        })
        .collect()
}

/// Golden-section minimization of `f` on `[a, b]` down to a bracket of `tol`.
pub fn golden_section<T: Real, F: FnMut(T) -> Result<T>>(mut f: F, mut a: T, mut b: T, tol: T) -> Result<(T, T, usize)> {
    let inv_phi = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let mut c = b - (b - a) * inv_phi;
    let mut d = a + (b - a) * inv_phi;
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut evals = 2;
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * inv_phi;
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * inv_phi;
            fd = f(d)?;
        }
        evals += 1;
    }
    Ok(if fc < fd { (c, fc, evals) } else { (d, fd, evals) })
}

/// Jump search on an arbitrary span: grid scan followed by golden-section
/// refinement around the best grid point.
pub fn find_phase_jump_over<T: Real>(
    waveform: &DriveWaveform<T>,
    span: T,
    jump_time: T,
    search_tol: T,
    grid: usize,
    tol: T,
) -> Result<(T, T, SearchDiagnostics)> {
    const OP: &str = "pulses::find_phase_jump";
    if !(search_tol > T::zero()) {
        return Err(Error::invalid(OP, "search_tol must be positive"));
    }
    if grid < 3 {
        return Err(Error::invalid(OP, "grid needs at least 3 points"));
    }
    if !(jump_time > T::zero() && jump_time < span) {
        return Err(Error::invalid(OP, "jump time must lie inside the span"));
    }
    let scan = landscape(waveform, span, jump_time, grid, tol)?;
    let vals: Vec<T> = scan.iter().map(|p| p.1).collect();
    let (best, &min) = vals.iter().enumerate().min_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap();
    let max = vals.iter().copied().fold(T::neg_infinity(), T::max);
    let mut diag = SearchDiagnostics { evaluations: grid, ..Default::default() };
    if max - min <= T::lit(1e-15).max(T::lit(10.0) * T::epsilon() * max) {
        diag.degenerate = true;
        return Ok((scan[best].0, min, diag));
    }
    let local_minima = (0..grid)
        .filter(|&k| {
            let prev = vals[(k + grid - 1) % grid];
            let next = vals[(k + 1) % grid];
            vals[k] < prev && vals[k] <= next
        })
        .count();
    diag.multimodal = local_minima > 1;
    let step = T::two_pi() / T::from_usize(grid).unwrap();
    let centre = scan[best].0;
    let (theta, value, evals) =
        golden_section(|th| residual_p2(waveform, span, jump_time, th, tol), centre - step, centre + step, search_tol)?;
    diag.evaluations += evals;
    if value <= min {
        Ok((wrap_phase(theta), value, diag))
    } else {
        Ok((centre, min, diag))
    }
}

/// Finds the jump phase that returns the atom to |1⟩ at the end of one
/// modulation cycle, with the jump at the detuning minimum. Also fills in the
/// per-pulse probability and light-shift phase of the resulting design.
pub fn find_phase_jump<T: Real>(waveform: &DriveWaveform<T>, search_tol: T, tol: T) -> Result<PulseDesign<T>> {
    find_phase_jump_with_grid(waveform, search_tol, DEFAULT_GRID, tol)
}

pub fn find_phase_jump_with_grid<T: Real>(waveform: &DriveWaveform<T>, search_tol: T, grid: usize, tol: T) -> Result<PulseDesign<T>> {
    const OP: &str = "pulses::find_phase_jump";
    waveform.validate(OP)?;
    let period = waveform.period().ok_or_else(|| Error::invalid(OP, "waveform has no modulation"))?;
    let jump_time = waveform.resonance_time(0).unwrap();
    let base = DriveWaveform { jump_schedule: Vec::new(), n_cycles: 1, ..waveform.clone() };
    let (theta, residual, diagnostics) = find_phase_jump_over(&base, period, jump_time, search_tol, grid, tol)?;
    let outcome = run_cycle(&base, period, jump_time, theta, tol)?;
    let mut design = PulseDesign {
        base,
        jump_phase: theta,
        jump_time,
        residual_p2: residual,
        p_scatter: T::zero(),
        stark_per_cycle: -outcome.c1_end.arg(),
        diagnostics,
    };
    design.p_scatter = per_pulse_probability(&design, tol)?.from_p2_integral;
    Ok(design)
}

/// Design with a given jump phase instead of the optimum.
pub fn design_with_jump<T: Real>(waveform: &DriveWaveform<T>, theta: T, tol: T) -> Result<PulseDesign<T>> {
    const OP: &str = "pulses::design_with_jump";
    waveform.validate(OP)?;
    if !theta.is_finite() {
        return Err(Error::invalid(OP, "jump phase must be finite"));
    }
    let period = waveform.period().ok_or_else(|| Error::invalid(OP, "waveform has no modulation"))?;
    let jump_time = waveform.resonance_time(0).unwrap();
    let base = DriveWaveform { jump_schedule: Vec::new(), n_cycles: 1, ..waveform.clone() };
    let outcome = run_cycle(&base, period, jump_time, theta, tol)?;
    let mut design = PulseDesign {
        base,
        jump_phase: wrap_phase(theta),
        jump_time,
        residual_p2: outcome.residual_p2,
        p_scatter: T::zero(),
        stark_per_cycle: -outcome.c1_end.arg(),
        diagnostics: SearchDiagnostics::default(),
    };
    design.p_scatter = per_pulse_probability(&design, tol)?.from_p2_integral;
    Ok(design)
}

/// Per-pulse measurement probability by two routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulseProbability<T> {
    /// `Γ2 ∫ P2 dt` over one cycle, with P2 from the coherent (Γ2 = 0) run.
    pub from_p2_integral: T,
    /// `1 − |ψ(T)|²` of the decaying-amplitude run.
    pub from_norm_loss: T,
    /// Set when the probability exceeds the weak-scatter limit.
    pub weak_scatter_warning: bool,
}

pub fn per_pulse_probability<T: Real>(design: &PulseDesign<T>, tol: T) -> Result<PulseProbability<T>> {
    let period = design.period();
    let w = design.cycle_waveform(0);
    let z = Complex::new(T::zero(), T::zero());
    let start = [z, Complex::new(T::one(), T::zero()), z];
    let coherent = bloch::evolve_pure(start, &w.coherent(), T::zero(), period, tol)?;
    let from_p2_integral = design.base.gamma2 * coherent.integrated_p2();
    let decaying = bloch::evolve_pure(start, &w, T::zero(), period, tol)?;
    let end = decaying.final_amplitudes();
    let from_norm_loss = T::one() - (end[0].norm_sqr() + end[1].norm_sqr() + end[2].norm_sqr());
    Ok(PulseProbability {
        from_p2_integral,
        from_norm_loss,
        weak_scatter_warning: from_p2_integral.max(from_norm_loss) > T::lit(WEAK_SCATTER_LIMIT),
    })
}

/// Pulse counts needed for a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasurementBudget {
    /// `1/p`.
    pub expected_pulses: f64,
    /// Smallest `n` with `1 − (1−p)ⁿ ≥ target`.
    pub threshold_pulses: u64,
}

/// `P_γ(n) = 1 − (1−p)ⁿ`.
pub fn cumulative_probability(p: f64, n: u64) -> f64 {
    -(n as f64 * (-p).ln_1p()).exp_m1()
}

pub fn pulses_for_measurement(p: f64, target: f64) -> Result<MeasurementBudget> {
    const OP: &str = "pulses::pulses_for_measurement";
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(OP, format!("p = {p} not in (0, 1)")));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid(OP, format!("target = {target} not in (0, 1)")));
    }
    let n = ((-target).ln_1p() / (-p).ln_1p()).ceil().max(1.0) as u64;
    Ok(MeasurementBudget { expected_pulses: 1.0 / p, threshold_pulses: n })
}

/// CSV of `P_γ(n)` for `n = 0, stride, 2·stride, … ≤ n_max`.
pub fn write_cumulative_csv<W: Write>(out: &mut W, p: f64, n_max: u64, stride: u64) -> std::io::Result<()> {
    writeln!(out, "n,p_gamma")?;
    let stride = stride.max(1);
    let mut n = 0;
    while n <= n_max {
        writeln!(out, "{n},{}", cumulative_probability(p, n))?;
        n += stride;
    }
    Ok(())
}

/// CSV of the coarse residual landscape.
pub fn write_landscape_csv<W: Write, T: Real>(out: &mut W, scan: &[(T, T)]) -> std::io::Result<()> {
    writeln!(out, "jump_phase,residual_p2")?;
    for (theta, r) in scan {
        writeln!(out, "{},{}", theta.as_f64(), r.as_f64())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModulationCorrection<T> {
    pub nu_mod_corrected: T,
    /// `(ν_mod′ − ν_mod)/ν_mod`; negative for a decrease.
    pub fractional_change: T,
}

/// Modulation frequency whose period matches one period of the light-shifted
/// two-state evolution: `ν_mod′ = ν10 / (1 + stark/2π)`.
pub fn corrected_modulation<T: Real>(waveform: &DriveWaveform<T>, stark_per_cycle: T, nu10: T) -> Result<ModulationCorrection<T>> {
    const OP: &str = "pulses::corrected_modulation";
    if !(stark_per_cycle.abs() < T::PI()) {
        return Err(Error::invalid(OP, "|stark_per_cycle| must be below π"));
    }
    if !(nu10 > T::zero()) {
        return Err(Error::invalid(OP, "nu10 must be positive"));
    }
    let corrected = nu10 / (T::one() + stark_per_cycle / T::two_pi());
    let nu_mod = waveform.nu_mod();
    let reference = if nu_mod > T::zero() { nu_mod } else { nu10 };
    Ok(ModulationCorrection { nu_mod_corrected: corrected, fractional_change: (corrected - reference) / reference })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EomFeasibility {
    /// Jump duration as a fraction of the two-state period.
    pub fraction: f64,
    pub max_fraction: f64,
    pub feasible: bool,
}

/// Whether an electro-optic phase step of `jump_duration` (s) is short
/// compared with the two-state period `1/nu10` (Hz).
pub fn eom_feasibility(nu10: f64, jump_duration: f64, max_fraction: f64) -> Result<EomFeasibility> {
    const OP: &str = "pulses::eom_feasibility";
    if !(jump_duration > 0.0 && jump_duration.is_finite()) {
        return Err(Error::invalid(OP, "jump_duration must be positive"));
    }
    if !(nu10 > 0.0 && nu10.is_finite()) {
        return Err(Error::invalid(OP, "nu10 must be positive"));
    }
    let fraction = nu10 * jump_duration;
    Ok(EomFeasibility { fraction, max_fraction, feasible: fraction <= max_fraction * (1.0 + 1e-12) })
}
