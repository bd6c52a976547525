//! Optical Bloch equations for the |1⟩↔|2⟩ detection transition under a
//! frequency-modulated drive, with |0⟩ as an uncoupled spectator.
//!
//! Frame: the drive phase entering the coupling is the integral of the
//! instantaneous detuning plus any scheduled phase jumps,
//!
//! ```text
//! δ(t) = ω_off (1 + cos ω_mod t)
//! Φ(t) = ω_off (t + sin(ω_mod t)/ω_mod) + Σ_{t_k ≤ t} θ_k
//! H    = ω10 |0⟩⟨0| + (Ω_R/2) (e^{iΦ} |1⟩⟨2| + e^{-iΦ} |2⟩⟨1|)
//! ```
//!
//! with spontaneous decay `|2⟩ → |1⟩` at rate Γ2 (closed transition). In this
//! frame c1 is stationary without light, and `arg c1 − arg c0` advances at ω10.
//! All rates are in units of Γ2 when Γ2 = 1.

use std::io::Write;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, OdeError, Result};
use crate::ode::{self, DenseSolution};
use crate::scalar::Real;
use crate::timescales::TwoStateAmplitudes;

/// Smallest tolerance accepted by [`integrate`].
pub const MIN_TOL: f64 = 1e-12;
/// Largest tolerance accepted by [`integrate`].
pub const MAX_TOL: f64 = 1e-4;
/// Default integration tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Ratio of the per-step error target to the requested accuracy.
pub const LOCAL_TOL_FACTOR: f64 = 0.02;

/// An instantaneous drive-phase increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseJump<T> {
    pub time: T,
    pub phase: T,
}

/// Detection-laser program. Frequencies are angular (`ω = 2πν`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveWaveform<T> {
    /// `2π·ν_off`.
    pub omega_off: T,
    /// `2π·ν_mod`. Zero gives a constant detuning of `2·omega_off`.
    pub omega_mod: T,
    /// Rabi frequency Ω_R.
    pub omega_r: T,
    /// Spontaneous emission rate Γ2.
    pub gamma2: T,
    /// Two-state angular splitting `2π·ν10`, the free rate of the spectator phase.
    pub omega_10: T,
    #[serde(default = "Vec::new")]
    pub jump_schedule: Vec<PhaseJump<T>>,
    pub n_cycles: usize,
}

impl<T: Real> DriveWaveform<T> {
    /// Modulated drive with `ω10 = ω_mod` and one cycle.
    pub fn new(omega_off: T, omega_mod: T, omega_r: T, gamma2: T) -> Self {
        Self { omega_off, omega_mod, omega_r, gamma2, omega_10: omega_mod, jump_schedule: Vec::new(), n_cycles: 1 }
    }

    /// The Fig. 3 parameter set `{2πν_off, 2πν_mod, Ω_R, Γ2} = {100, 10, 2, 1}`.
    pub fn reference() -> Self {
        Self::new(T::lit(100.0), T::lit(10.0), T::lit(2.0), T::one())
    }

    /// Constant detuning `delta` (no modulation).
    pub fn constant(delta: T, omega_r: T, gamma2: T, omega_10: T) -> Self {
        Self {
            omega_off: delta / T::lit(2.0),
            omega_mod: T::zero(),
            omega_r,
            gamma2,
            omega_10,
            jump_schedule: Vec::new(),
            n_cycles: 1,
        }
    }

    pub fn nu_off(&self) -> T {
        self.omega_off / T::two_pi()
    }

    pub fn nu_mod(&self) -> T {
        self.omega_mod / T::two_pi()
    }

    pub fn nu_10(&self) -> T {
        self.omega_10 / T::two_pi()
    }

    /// Modulation period, `None` for a constant detuning.
    pub fn period(&self) -> Option<T> {
        (self.omega_mod > T::zero()).then(|| T::two_pi() / self.omega_mod)
    }

    /// Time of the `k`-th detuning minimum (resonance), half a period after
    /// the `k`-th maximum.
    pub fn resonance_time(&self, k: usize) -> Option<T> {
        self.period().map(|p| (T::from_usize(k).unwrap() + T::lit(0.5)) * p)
    }

    /// Copy with Γ2 = 0.
    pub fn coherent(&self) -> Self {
        Self { gamma2: T::zero(), ..self.clone() }
    }

    pub fn with_omega_r(&self, omega_r: T) -> Self {
        Self { omega_r, ..self.clone() }
    }

    pub fn with_jumps(&self, jumps: Vec<PhaseJump<T>>) -> Self {
        Self { jump_schedule: jumps, ..self.clone() }
    }

    pub fn validate(&self, op: &'static str) -> Result<()> {
        let finite = [self.omega_off, self.omega_mod, self.omega_r, self.gamma2, self.omega_10].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid(op, "waveform has non-finite parameters"));
        }
        if self.omega_mod < T::zero() || self.omega_r < T::zero() || self.gamma2 < T::zero() {
            return Err(Error::invalid(op, "omega_mod, omega_r and gamma2 must be non-negative"));
        }
        for pair in self.jump_schedule.windows(2) {
            if pair[1].time <= pair[0].time {
                return Err(Error::invalid(op, "jump_schedule times must be strictly increasing"));
            }
        }
        if self.jump_schedule.iter().any(|j| !(j.time.is_finite() && j.phase.is_finite())) {
            return Err(Error::invalid(op, "jump_schedule has non-finite entries"));
        }
        Ok(())
    }

    /// Drive phase from the frequency sweep alone (no jumps).
    pub fn sweep_phase(&self, t: T) -> T {
        if self.omega_mod > T::zero() {
            self.omega_off * (t + (self.omega_mod * t).sin() / self.omega_mod)
        } else {
            T::lit(2.0) * self.omega_off * t
        }
    }

    /// Total jump phase applied at or before `t`.
    pub fn jump_phase_until(&self, t: T) -> T {
        self.jump_schedule.iter().take_while(|j| j.time <= t).fold(T::zero(), |a, j| a + j.phase)
    }

    /// Cumulative drive phase `Φ(t)`.
    pub fn drive_phase(&self, t: T) -> T {
        self.sweep_phase(t) + self.jump_phase_until(t)
    }
}

/// Instantaneous detuning `δ(t) = ω_off (1 + cos ω_mod t)`.
pub fn detuning_at<T: Real>(waveform: &DriveWaveform<T>, t: T) -> T {
    waveform.omega_off * (T::one() + (waveform.omega_mod * t).cos())
}

/// State of the three-level atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AtomState<T> {
    /// Amplitudes `[c0, c1, c2]`; the norm decays under Γ2 (no-jump evolution).
    Pure([Complex<T>; 3]),
    /// Density matrix `ρ[i][j]`.
    Density([[Complex<T>; 3]; 3]),
}

impl<T: Real> AtomState<T> {
    pub fn pure(c0: Complex<T>, c1: Complex<T>, c2: Complex<T>) -> Self {
        AtomState::Pure([c0, c1, c2])
    }

    /// All population in |1⟩.
    pub fn ground1() -> Self {
        let z = Complex::new(T::zero(), T::zero());
        AtomState::Pure([z, Complex::new(T::one(), T::zero()), z])
    }

    /// Two-state superposition with |2⟩ empty.
    pub fn from_two_state(amps: &TwoStateAmplitudes<T>) -> Self {
        let (c0, c1) = amps.amplitudes();
        AtomState::Pure([c0, c1, Complex::new(T::zero(), T::zero())])
    }

    pub fn is_density(&self) -> bool {
        matches!(self, AtomState::Density(_))
    }

    pub fn to_density(&self) -> Self {
        match *self {
            AtomState::Pure(c) => AtomState::Density(std::array::from_fn(|i| std::array::from_fn(|j| c[i] * c[j].conj()))),
            d => d,
        }
    }

    /// Populations `[P0, P1, P2]`.
    pub fn populations(&self) -> [T; 3] {
        match self {
            AtomState::Pure(c) => [c[0].norm_sqr(), c[1].norm_sqr(), c[2].norm_sqr()],
            AtomState::Density(r) => [r[0][0].re, r[1][1].re, r[2][2].re],
        }
    }

    pub fn p2(&self) -> T {
        self.populations()[2]
    }

    /// Squared norm (pure) or trace (density).
    pub fn norm_sqr(&self) -> T {
        let p = self.populations();
        p[0] + p[1] + p[2]
    }

    /// Phase of the |0⟩–|1⟩ coherence, `arg c1 − arg c0` (pure) or `arg ρ10`.
    pub fn coherence_phase(&self) -> T {
        match self {
            AtomState::Pure(c) => c[1].arg() - c[0].arg(),
            AtomState::Density(r) => r[1][0].arg(),
        }
    }

    fn pack_pure(c: &[Complex<T>; 3]) -> [T; 6] {
        [c[0].re, c[0].im, c[1].re, c[1].im, c[2].re, c[2].im]
    }

    fn unpack_pure(y: &[T; 6]) -> [Complex<T>; 3] {
        [Complex::new(y[0], y[1]), Complex::new(y[2], y[3]), Complex::new(y[4], y[5])]
    }

    fn pack_density(r: &[[Complex<T>; 3]; 3]) -> [T; 18] {
        let mut y = [T::zero(); 18];
        for i in 0..3 {
            for j in 0..3 {
                y[2 * (3 * i + j)] = r[i][j].re;
                y[2 * (3 * i + j) + 1] = r[i][j].im;
            }
        }
        y
    }

    fn unpack_density(y: &[T; 18]) -> [[Complex<T>; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| Complex::new(y[2 * (3 * i + j)], y[2 * (3 * i + j) + 1])))
    }
}

fn cis<T: Real>(x: T) -> Complex<T> {
    Complex::new(x.cos(), x.sin())
}

fn pure_derivative<T: Real>(w: &DriveWaveform<T>, phase: T, c: &[Complex<T>; 3]) -> [Complex<T>; 3] {
    let i = Complex::new(T::zero(), T::one());
    let half_omega = w.omega_r / T::lit(2.0);
    let e = cis(phase);
    [
        -i * c[0] * w.omega_10,
        -i * e * c[2] * half_omega,
        -i * e.conj() * c[1] * half_omega - c[2] * (w.gamma2 / T::lit(2.0)),
    ]
}

fn density_derivative<T: Real>(w: &DriveWaveform<T>, phase: T, r: &[[Complex<T>; 3]; 3]) -> [[Complex<T>; 3]; 3] {
    let zero = Complex::new(T::zero(), T::zero());
    let i = Complex::new(T::zero(), T::one());
    let half_omega = w.omega_r / T::lit(2.0);
    let e = cis(phase);
    let mut h = [[zero; 3]; 3];
    h[0][0] = Complex::new(w.omega_10, T::zero());
    h[1][2] = e * half_omega;
    h[2][1] = e.conj() * half_omega;
    let mut d = [[zero; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut comm = zero;
            for k in 0..3 {
                comm = comm + h[a][k] * r[k][b] - r[a][k] * h[k][b];
            }
            d[a][b] = -i * comm;
        }
    }
    let g = w.gamma2;
    let half_g = g / T::lit(2.0);
    // Γ(LρL† − ½{L†L, ρ}) with L = |1⟩⟨2|
    d[1][1] = d[1][1] + r[2][2] * g;
    for k in 0..3 {
        d[2][k] = d[2][k] - r[2][k] * half_g;
        d[k][2] = d[k][2] - r[k][2] * half_g;
    }
    d
}

/// Time derivative of `state` at time `t`, jumps included.
pub fn rhs<T: Real>(state: &AtomState<T>, waveform: &DriveWaveform<T>, t: T) -> AtomState<T> {
    let phase = waveform.drive_phase(t);
    match state {
        AtomState::Pure(c) => AtomState::Pure(pure_derivative(waveform, phase, c)),
        AtomState::Density(r) => AtomState::Density(density_derivative(waveform, phase, r)),
    }
}

fn check_tol<T: Real>(op: &'static str, tol: T) -> Result<()> {
    let lo = T::lit(MIN_TOL).max(T::lit(100.0) * T::epsilon());
    let hi = T::lit(MAX_TOL);
    if !(tol >= lo && tol <= hi) {
        return Err(Error::Integration { op, source: OdeError::BadTolerance { tol: tol.as_f64(), min: lo.as_f64(), max: hi.as_f64() } });
    }
    Ok(())
}

/// Interior breakpoints and the drive-phase offset active on each piece.
fn pieces<T: Real>(w: &DriveWaveform<T>, t0: T, t1: T) -> (Vec<T>, Vec<T>) {
    let mut offset = w.jump_phase_until(t0);
    let mut bps = Vec::new();
    let mut offsets = vec![offset];
    for j in w.jump_schedule.iter().filter(|j| j.time > t0 && j.time < t1) {
        offset = offset + j.phase;
        bps.push(j.time);
        offsets.push(offset);
    }
    (bps, offsets)
}

/// Dense no-jump evolution of the amplitudes `[c0, c1, c2]`.
#[derive(Debug, Clone)]
pub struct PureEvolution<T> {
    solution: DenseSolution<T, 6>,
}

impl<T: Real> PureEvolution<T> {
    pub fn t_start(&self) -> T {
        self.solution.t_start()
    }

    pub fn t_end(&self) -> T {
        self.solution.t_end()
    }

    pub fn amplitudes(&self, t: T) -> [Complex<T>; 3] {
        AtomState::unpack_pure(&self.solution.eval(t))
    }

    pub fn state(&self, t: T) -> AtomState<T> {
        AtomState::Pure(self.amplitudes(t))
    }

    pub fn final_amplitudes(&self) -> [Complex<T>; 3] {
        AtomState::unpack_pure(&self.solution.y_end())
    }

    pub fn p2(&self, t: T) -> T {
        self.amplitudes(t)[2].norm_sqr()
    }

    /// `∫ P2 dt` over the whole span, by 5-point Gauss–Legendre on each
    /// accepted step's interpolant.
    pub fn integrated_p2(&self) -> T {
        self.integrate_over_steps(|a| a[2].norm_sqr())
    }

    /// `∫ f(c(t)) dt` over the whole span.
    pub fn integrate_over_steps<F: Fn(&[Complex<T>; 3]) -> T>(&self, f: F) -> T {
        let (nodes, weights) = gauss5::<T>();
        let mut total = T::zero();
        for step in self.solution.steps() {
            let half = step.h / T::lit(2.0);
            let mid = step.t0 + half;
            let mut s = T::zero();
            for k in 0..5 {
                s = s + weights[k] * f(&self.amplitudes(mid + half * nodes[k]));
            }
            total = total + s * half;
        }
        total
    }

    pub fn accepted_steps(&self) -> usize {
        self.solution.accepted_steps()
    }
}

fn gauss5<T: Real>() -> ([T; 5], [T; 5]) {
    let a = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let b = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let wa = (322.0 + 13.0 * 70.0f64.sqrt()) / 900.0;
    let wb = (322.0 - 13.0 * 70.0f64.sqrt()) / 900.0;
    (
        [T::lit(-b), T::lit(-a), T::zero(), T::lit(a), T::lit(b)],
        [T::lit(wb), T::lit(wa), T::lit(128.0 / 225.0), T::lit(wa), T::lit(wb)],
    )
}

/// Integrates pure amplitudes on `[t0, t1]` with dense output.
pub fn evolve_pure<T: Real>(
    amplitudes: [Complex<T>; 3],
    waveform: &DriveWaveform<T>,
    t0: T,
    t1: T,
    tol: T,
) -> Result<PureEvolution<T>> {
    const OP: &str = "bloch::evolve_pure";
    waveform.validate(OP)?;
    check_tol(OP, tol)?;
    let (bps, offsets) = pieces(waveform, t0, t1);
    let opts = local_options(tol);
    let solution = ode::solve_piecewise(
        |piece, t, y: &[T; 6]| {
            let c = AtomState::unpack_pure(y);
            AtomState::pack_pure(&pure_derivative(waveform, waveform.sweep_phase(t) + offsets[piece], &c))
        },
        t0,
        AtomState::pack_pure(&amplitudes),
        t1,
        &bps,
        &opts,
        |_, _| Ok(()),
    )
    .map_err(Error::ode(OP))?;
    Ok(PureEvolution { solution })
}

/// Step-control options for a requested accuracy `tol`. The local error
/// target is tightened so that the global error over tens of Rabi periods
/// stays below `10·tol`.
pub(crate) fn local_options<T: Real>(tol: T) -> ode::Options<T> {
    ode::Options::with_tol(tol * T::lit(LOCAL_TOL_FACTOR))
}

/// True if `r + shift·I` admits a Cholesky factorisation.
#[allow(clippy::needless_range_loop)]
fn positive_after_shift<T: Real>(r: &[[Complex<T>; 3]; 3], shift: T) -> bool {
    let zero = Complex::new(T::zero(), T::zero());
    let mut l = [[zero; 3]; 3];
    for j in 0..3 {
        let mut d = r[j][j].re + shift;
        for k in 0..j {
            d = d - l[j][k].norm_sqr();
        }
        if !(d > T::zero()) {
            return false;
        }
        let dj = d.sqrt();
        l[j][j] = Complex::new(dj, T::zero());
        for i in j + 1..3 {
            let mut s = r[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k].conj();
            }
            l[i][j] = s / dj;
        }
    }
    true
}

/// Smallest eigenvalue of a 3×3 Hermitian matrix (trigonometric cubic root).
pub fn min_eigenvalue_hermitian3<T: Real>(r: &[[Complex<T>; 3]; 3]) -> T {
    let a = r[0][0].re;
    let b = r[1][1].re;
    let c = r[2][2].re;
    let p1 = r[0][1].norm_sqr() + r[0][2].norm_sqr() + r[1][2].norm_sqr();
    let q = (a + b + c) / T::lit(3.0);
    let p2 = (a - q).powi(2) + (b - q).powi(2) + (c - q).powi(2) + T::lit(2.0) * p1;
    if p2 <= T::epsilon() * T::epsilon() {
        return q;
    }
    let p = (p2 / T::lit(6.0)).sqrt();
    // B = (A − qI)/p; det(B)/2
    let bm: [[Complex<T>; 3]; 3] =
        std::array::from_fn(|i| std::array::from_fn(|j| if i == j { (r[i][j] - q) / p } else { r[i][j] / p }));
    let det = bm[0][0] * (bm[1][1] * bm[2][2] - bm[1][2] * bm[2][1]) - bm[0][1] * (bm[1][0] * bm[2][2] - bm[1][2] * bm[2][0])
        + bm[0][2] * (bm[1][0] * bm[2][1] - bm[1][1] * bm[2][0]);
    let half_det = (det.re / T::lit(2.0)).max(-T::one()).min(T::one());
    let phi = half_det.acos() / T::lit(3.0);
    q + T::lit(2.0) * p * (phi + T::lit(2.0) * T::PI() / T::lit(3.0)).cos()
}

#[allow(clippy::needless_range_loop)]
fn density_check<T: Real>(tol: T) -> impl FnMut(T, &[T; 18]) -> std::result::Result<(), OdeError> {
    let bound = T::lit(1e-9).max(T::lit(1e4) * T::epsilon());
    let psd_floor = -(T::lit(1e-9).max(T::lit(10.0) * tol));
    move |t, y| {
        let r = AtomState::unpack_density(y);
        let trace = r[0][0].re + r[1][1].re + r[2][2].re;
        if (trace - T::one()).abs() > bound {
            return Err(OdeError::InvariantViolated { t: t.as_f64(), what: format!("trace = {}", trace.as_f64()) });
        }
        for i in 0..3 {
            for j in 0..3 {
                if (r[i][j] - r[j][i].conj()).norm() > bound {
                    return Err(OdeError::InvariantViolated { t: t.as_f64(), what: "density matrix lost hermiticity".into() });
                }
            }
        }
        if !positive_after_shift(&r, -psd_floor) {
            let lmin = min_eigenvalue_hermitian3(&r);
            return Err(OdeError::InvariantViolated { t: t.as_f64(), what: format!("eigenvalue {}", lmin.as_f64()) });
        }
        Ok(())
    }
}

/// Sampled evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries<T> {
    pub times: Vec<T>,
    pub states: Vec<AtomState<T>>,
    pub p2: Vec<T>,
}

impl<T: Real> TimeSeries<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with amplitude (or density-matrix) columns, P2, δ(t) and Φ(t).
    pub fn write_csv<W: Write>(&self, out: &mut W, waveform: &DriveWaveform<T>) -> std::io::Result<()> {
        let density = self.states.first().is_some_and(AtomState::is_density);
        if density {
            writeln!(out, "t,rho00,rho11,rho22,re_rho01,im_rho01,re_rho02,im_rho02,re_rho12,im_rho12,p2,delta,drive_phase")?;
        } else {
            writeln!(out, "t,re_c0,im_c0,re_c1,im_c1,re_c2,im_c2,p2,delta,drive_phase")?;
        }
        for ((t, s), p2) in self.times.iter().zip(&self.states).zip(&self.p2) {
            let cols: Vec<f64> = match s {
                AtomState::Pure(c) => c.iter().flat_map(|z| [z.re.as_f64(), z.im.as_f64()]).collect(),
                AtomState::Density(r) => vec![
                    r[0][0].re.as_f64(),
                    r[1][1].re.as_f64(),
                    r[2][2].re.as_f64(),
                    r[0][1].re.as_f64(),
                    r[0][1].im.as_f64(),
                    r[0][2].re.as_f64(),
                    r[0][2].im.as_f64(),
                    r[1][2].re.as_f64(),
                    r[1][2].im.as_f64(),
                ],
            };
            write!(out, "{}", t.as_f64())?;
            for v in cols {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{},{},{}", p2.as_f64(), detuning_at(waveform, *t).as_f64(), waveform.drive_phase(*t).as_f64())?;
        }
        Ok(())
    }
}

/// Evenly spaced sample times on `[t0, t1]` (both ends included).
pub fn uniform_grid<T: Real>(t0: T, t1: T, n: usize) -> Vec<T> {
    let n = n.max(2);
    let step = (t1 - t0) / T::from_usize(n - 1).unwrap();
    (0..n).map(|k| if k + 1 == n { t1 } else { t0 + step * T::from_usize(k).unwrap() }).collect()
}

/// Sample grid over `n_cycles` modulation periods with `per_cycle` intervals
/// per period; cycle boundaries land exactly on `k·T`.
pub fn cycle_grid<T: Real>(waveform: &DriveWaveform<T>, n_cycles: usize, per_cycle: usize) -> Option<Vec<T>> {
    let period = waveform.period()?;
    let per_cycle = per_cycle.max(1);
    let mut out = Vec::with_capacity(n_cycles * per_cycle + 1);
    for k in 0..n_cycles {
        let base = period * T::from_usize(k).unwrap();
        for j in 0..per_cycle {
            out.push(base + period * T::from_usize(j).unwrap() / T::from_usize(per_cycle).unwrap());
        }
    }
    out.push(period * T::from_usize(n_cycles).unwrap());
    Some(out)
}

/// Integrates from `t = samples[0]` (`samples` strictly increasing, ending at
/// `t_end`) and records the state at every sample time.
///
/// Phase jumps from the waveform's schedule are applied exactly at their
/// scheduled times. Density-matrix runs check trace, hermiticity and
/// positivity after every accepted step.
pub fn integrate<T: Real>(state0: &AtomState<T>, waveform: &DriveWaveform<T>, samples: &[T], tol: T) -> Result<TimeSeries<T>> {
    const OP: &str = "bloch::integrate";
    waveform.validate(OP)?;
    check_tol(OP, tol)?;
    if samples.is_empty() {
        return Err(Error::invalid(OP, "no sample times"));
    }
    if samples.windows(2).any(|w| w[1] <= w[0]) || samples.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid(OP, "sample times must be finite and strictly increasing"));
    }
    if samples[0] < T::zero() {
        return Err(Error::invalid(OP, "sample times must be non-negative"));
    }
    let t0 = samples[0];
    let t1 = *samples.last().unwrap();
    let (bps, offsets) = pieces(waveform, t0, t1);
    let opts = local_options(tol);
    let states: Vec<AtomState<T>> = match state0 {
        AtomState::Pure(c) => {
            let sol = ode::solve_piecewise(
                |piece, t, y: &[T; 6]| {
                    let c = AtomState::unpack_pure(y);
                    AtomState::pack_pure(&pure_derivative(waveform, waveform.sweep_phase(t) + offsets[piece], &c))
                },
                t0,
                AtomState::pack_pure(c),
                t1,
                &bps,
                &opts,
                |t, y: &[T; 6]| {
                    if y.iter().all(|v| v.is_finite()) {
                        Ok(())
                    } else {
                        Err(OdeError::NonFinite { t: t.as_f64() })
                    }
                },
            )
            .map_err(Error::ode(OP))?;
            samples.iter().map(|&t| AtomState::Pure(AtomState::unpack_pure(&sol.eval(t)))).collect()
        }
        AtomState::Density(r) => {
            let mut check = density_check(tol);
            check(t0, &AtomState::pack_density(r)).map_err(Error::ode(OP))?;
            let sol = ode::solve_piecewise(
                |piece, t, y: &[T; 18]| {
                    let r = AtomState::unpack_density(y);
                    AtomState::pack_density(&density_derivative(waveform, waveform.sweep_phase(t) + offsets[piece], &r))
                },
                t0,
                AtomState::pack_density(r),
                t1,
                &bps,
                &opts,
                check,
            )
            .map_err(Error::ode(OP))?;
            samples.iter().map(|&t| AtomState::Density(AtomState::unpack_density(&sol.eval(t)))).collect()
        }
    };
    let p2 = states.iter().map(AtomState::p2).collect();
    Ok(TimeSeries { times: samples.to_vec(), states, p2 })
}

/// Light-shift phase per modulation cycle, from a coherent (Γ2 = 0) series
/// that contains samples at the detuning maxima `k·T`.
///
/// Returned as the per-cycle lag of `arg c1` relative to free evolution:
/// positive when the light shift retards the two-state phase. Averaged over
/// all whole cycles in the series; the series must be sampled finely enough
/// to unwrap `arg c1` between neighbouring samples.
pub fn stark_phase<T: Real>(series: &TimeSeries<T>, waveform: &DriveWaveform<T>) -> Result<T> {
    const OP: &str = "bloch::stark_phase";
    let period = waveform.period().ok_or_else(|| Error::invalid(OP, "waveform has no modulation"))?;
    if waveform.gamma2 != T::zero() {
        return Err(Error::invalid(OP, "requires coherent evolution (gamma2 = 0)"));
    }
    if series.is_empty() {
        return Err(Error::invalid(OP, "empty series"));
    }
    let eps = period * T::lit(1e-9);
    let t_first = series.times[0];
    let t_last = *series.times.last().unwrap();
    let k_first = (t_first / period - T::lit(1e-9)).ceil();
    let k_last = (t_last / period + T::lit(1e-9)).floor();
    if k_last - k_first < T::one() {
        return Err(Error::invalid(OP, "series spans less than one full modulation cycle"));
    }
    let find = |k: T| -> Result<usize> {
        let target = k * period;
        series
            .times
            .iter()
            .position(|&t| (t - target).abs() <= eps)
            .ok_or_else(|| Error::invalid(OP, "series lacks a sample at a cycle boundary"))
    };
    let i0 = find(k_first)?;
    let i1 = find(k_last)?;
    let c1 = |i: usize| match &series.states[i] {
        AtomState::Pure(c) => Ok(c[1]),
        AtomState::Density(_) => Err(Error::invalid(OP, "requires a pure-amplitude series")),
    };
    let mut unwrapped = T::zero();
    let mut prev = c1(i0)?;
    for i in i0 + 1..=i1 {
        let cur = c1(i)?;
        // phase increment between neighbours
        unwrapped = unwrapped + (cur * prev.conj()).arg();
        prev = cur;
    }
    Ok(-unwrapped / (k_last - k_first))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resonant(omega_r: f64, gamma2: f64) -> DriveWaveform<f64> {
        DriveWaveform::constant(0.0, omega_r, gamma2, 0.0)
    }

    #[test]
    fn detuning_examples() {
        let w = DriveWaveform::<f64>::reference();
        let period = w.period().unwrap();
        assert_eq!(detuning_at(&w, 0.0), 200.0);
        assert!(detuning_at(&w, period / 2.0).abs() < 1e-12);
        assert!((detuning_at(&w, period / 4.0) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn rhs_without_drive_keeps_populations() {
        let w = resonant(0.0, 0.0);
        let s = AtomState::from_two_state(&TwoStateAmplitudes::balanced(0.3));
        match rhs(&s, &w, 0.7) {
            AtomState::Pure(d) => {
                assert_eq!(d[1], Complex::new(0.0, 0.0));
                assert_eq!(d[2], Complex::new(0.0, 0.0));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn rhs_density_is_traceless() {
        let w = DriveWaveform::<f64>::reference();
        let s = AtomState::pure(Complex::new(0.5, 0.1), Complex::new(0.3, -0.6), Complex::new(0.2, 0.4)).to_density();
        match rhs(&s, &w, 0.123) {
            AtomState::Density(d) => {
                let tr = d[0][0] + d[1][1] + d[2][2];
                assert!(tr.norm() < 1e-14);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn no_drive_only_free_phase() {
        let w = DriveWaveform::<f64>::reference().with_omega_r(0.0);
        let amps = TwoStateAmplitudes::new(0.6, 0.4).unwrap();
        let s0 = AtomState::from_two_state(&amps);
        let grid = uniform_grid(0.0, 3.0, 31);
        let ts = integrate(&s0, &w, &grid, 1e-10).unwrap();
        for (t, s) in ts.times.iter().zip(&ts.states) {
            let AtomState::Pure(c) = s else { unreachable!() };
            assert!((c[1] - Complex::from_polar(0.8, 0.4)).norm() < 1e-9);
            assert!(c[2].norm() < 1e-12);
            assert!((c[0] - Complex::from_polar(0.6, -10.0 * t)).norm() < 1e-8);
        }
    }

    #[test]
    fn exponential_decay_oracle() {
        let w = resonant(0.0, 1.0);
        let s0 = AtomState::pure(Complex::new(0.0, 0.0), Complex::new(0.0, 0.0), Complex::new(1.0, 0.0));
        let tol = 1e-9;
        let grid = uniform_grid(0.0, 10.0, 401);
        let ts = integrate(&s0, &w, &grid, tol).unwrap();
        let worst = ts.times.iter().zip(&ts.p2).map(|(t, p)| (p - (-t).exp()).abs()).fold(0.0, f64::max);
        assert!(worst < 10.0 * tol, "worst {worst}");
        // density route: decayed population reappears in |1⟩
        let td = integrate(&s0.to_density(), &w, &grid, tol).unwrap();
        let pops = td.states.last().unwrap().populations();
        assert!((pops[1] - (1.0 - (-10.0f64).exp())).abs() < 10.0 * tol);
    }

    #[test]
    fn phase_jump_changes_drive_phase_exactly() {
        let w = DriveWaveform::<f64>::reference()
            .with_jumps(vec![PhaseJump { time: 0.2, phase: 1.0 }, PhaseJump { time: 0.3, phase: 0.5 }]);
        assert!((w.drive_phase(0.2) - w.sweep_phase(0.2) - 1.0).abs() < 1e-12);
        assert!((w.drive_phase(0.25) - w.sweep_phase(0.25) - 1.0).abs() < 1e-12);
        assert!((w.drive_phase(0.31) - w.sweep_phase(0.31) - 1.5).abs() < 1e-12);
        let bad = w.with_jumps(vec![PhaseJump { time: 0.3, phase: 1.0 }, PhaseJump { time: 0.2, phase: 1.0 }]);
        assert!(integrate(&AtomState::ground1(), &bad, &[0.0, 1.0], 1e-9).is_err());
    }

    #[test]
    fn tolerance_range_enforced() {
        let w = DriveWaveform::<f64>::reference();
        assert!(integrate(&AtomState::ground1(), &w, &[0.0, 1.0], 1e-3).is_err());
        assert!(integrate(&AtomState::ground1(), &w, &[0.0, 1.0], 1e-13).is_err());
        assert!(integrate(&AtomState::ground1(), &w, &[1.0, 0.5], 1e-9).is_err());
    }

    #[test]
    fn min_eigenvalue_matches_known_spectrum() {
        let z = Complex::new(0.0, 0.0);
        let r = [
            [Complex::new(2.0, 0.0), Complex::new(0.0, 1.0), z],
            [Complex::new(0.0, -1.0), Complex::new(2.0, 0.0), z],
            [z, z, Complex::new(5.0, 0.0)],
        ];
        // eigenvalues 1, 3, 5
        assert!((min_eigenvalue_hermitian3(&r) - 1.0f64).abs() < 1e-12);
    }

    #[test]
    fn stark_phase_zero_without_light() {
        let w = DriveWaveform::<f64>::reference().coherent().with_omega_r(0.0);
        let grid = cycle_grid(&w, 2, 64).unwrap();
        let ts = integrate(&AtomState::ground1(), &w, &grid, 1e-9).unwrap();
        assert!(stark_phase(&ts, &w).unwrap().abs() < 1e-12);
    }

    #[test]
    fn stark_phase_rejects_short_series() {
        let w = DriveWaveform::<f64>::reference().coherent();
        let period = w.period().unwrap();
        let grid = uniform_grid(0.0, 0.5 * period, 32);
        let ts = integrate(&AtomState::ground1(), &w, &grid, 1e-9).unwrap();
        assert!(stark_phase(&ts, &w).is_err());
        assert!(stark_phase(&ts, &DriveWaveform::<f64>::reference()).is_err());
    }
}
