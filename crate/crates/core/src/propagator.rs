//! One-cycle propagator of the bright branch `(c1, c2)` for drives that repeat
//! up to a constant phase advance per cycle.
//!
//! If `Φ(t + nL) = Φ(t) + nχ` on `[0, L)`, substituting `c2 = e^{−inχ} c2'`
//! removes the advance, so every cycle is propagated by the same `U(s)` and
//! only the |2⟩ component picks up `e^{iχ}` at each cycle boundary.

use num_complex::Complex;

use crate::bloch::{evolve_pure, DriveWaveform, PureEvolution};
use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type Spinor = [C64; 2];

/// Relative resolution of jump-time bisection, in units of the cycle length.
pub const JUMP_RESOLUTION: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CyclePropagator {
    span: f64,
    advance: f64,
    from1: PureEvolution<f64>,
    from2: PureEvolution<f64>,
    /// `U(span)` with the boundary phase folded into the |2⟩ row.
    boundary: [Spinor; 2],
}

impl CyclePropagator {
    /// Propagator over `[0, span]` of `waveform`, which may carry jumps inside
    /// the span. `span` must be a whole number of modulation periods when the
    /// drive is modulated.
    pub fn new(waveform: &DriveWaveform<f64>, span: f64, tol: f64) -> Result<Self> {
        const OP: &str = "propagator::CyclePropagator::new";
        if !(span > 0.0 && span.is_finite()) {
            return Err(Error::invalid(OP, "span must be positive"));
        }
        if let Some(period) = waveform.period() {
            let k = span / period;
            if (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
                return Err(Error::invalid(OP, "span must be a whole number of modulation periods"));
            }
        }
        if waveform.jump_schedule.iter().any(|j| j.time < 0.0 || j.time >= span) {
            return Err(Error::invalid(OP, "jumps must lie inside [0, span)"));
        }
        let z = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        let from1 = evolve_pure([z, one, z], waveform, 0.0, span, tol)?;
        let from2 = evolve_pure([z, z, one], waveform, 0.0, span, tol)?;
        let advance = waveform.drive_phase(span) - waveform.drive_phase(0.0);
        let e = C64::from_polar(1.0, advance);
        let (a, b) = (from1.final_amplitudes(), from2.final_amplitudes());
        let boundary = [[a[1], a[2] * e], [b[1], b[2] * e]];
        Ok(Self { span, advance, from1, from2, boundary })
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    /// Drive-phase advance χ per cycle.
    pub fn advance(&self) -> f64 {
        self.advance
    }

    /// `U(s)` as columns: images of |1⟩ and |2⟩.
    pub fn matrix(&self, s: f64) -> [Spinor; 2] {
        let a = self.from1.amplitudes(s);
        let b = self.from2.amplitudes(s);
        [[a[1], a[2]], [b[1], b[2]]]
    }

    pub fn apply(&self, s: f64, v: &Spinor) -> Spinor {
        let [c1, c2] = self.matrix(s);
        [c1[0] * v[0] + c2[0] * v[1], c1[1] * v[0] + c2[1] * v[1]]
    }

    /// `U(s)^{-1} w`.
    pub fn solve(&self, s: f64, w: &Spinor) -> Spinor {
        let [c1, c2] = self.matrix(s);
        let det = c1[0] * c2[1] - c2[0] * c1[1];
        [(c2[1] * w[0] - c2[0] * w[1]) / det, (c1[0] * w[1] - c1[1] * w[0]) / det]
    }

    /// Cycle-boundary map for the primed vector: `v ↦ diag(1, e^{iχ}) U(L) v`.
    pub fn next_cycle(&self, v: &Spinor) -> Spinor {
        let [c1, c2] = &self.boundary;
        [c1[0] * v[0] + c2[0] * v[1], c1[1] * v[0] + c2[1] * v[1]]
    }

    /// Smallest `s ∈ (lo, span]` with `|U(s) v|² ≤ r`, to within
    /// [`JUMP_RESOLUTION`]·span. Assumes the norm is non-increasing and
    /// already below `r` at `span`.
    pub fn first_passage(&self, v: &Spinor, r: f64, lo: f64) -> f64 {
        let norm = |s: f64| {
            let w = self.apply(s, v);
            w[0].norm_sqr() + w[1].norm_sqr()
        };
        let (mut a, mut b) = (lo, self.span);
        let eps = JUMP_RESOLUTION * self.span;
        while b - a > eps {
            let m = 0.5 * (a + b);
            if norm(m) <= r {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }
}

pub fn norm_sqr(v: &Spinor) -> f64 {
    v[0].norm_sqr() + v[1].norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::PhaseJump;

    #[test]
    fn rotated_cycles_match_direct_integration() {
        let w = DriveWaveform::<f64>::reference();
        let t = w.period().unwrap();
        let theta = 2.18;
        let cycle = w.with_jumps(vec![PhaseJump { time: t / 2.0, phase: theta }]);
        let prop = CyclePropagator::new(&cycle, t, 1e-11).unwrap();
        let n = 5;
        let jumps = (0..n).map(|k| PhaseJump { time: k as f64 * t + t / 2.0, phase: theta }).collect();
        let long = w.with_jumps(jumps);
        let z = C64::new(0.0, 0.0);
        let direct = evolve_pure([z, C64::new(1.0, 0.0), z], &long, 0.0, n as f64 * t, 1e-11).unwrap();
        let mut v = [C64::new(1.0, 0.0), z];
        let mut chi = 0.0;
        for _ in 0..n {
            v = prop.next_cycle(&v);
            chi += prop.advance();
        }
        let end = direct.final_amplitudes();
        assert!((v[0] - end[1]).norm() < 1e-9);
        // unprimed c2 = e^{-inχ} c2'
        assert!((v[1] * C64::from_polar(1.0, -chi) - end[2]).norm() < 1e-9);
    }

    #[test]
    fn inverse_round_trip() {
        let w = DriveWaveform::<f64>::reference();
        let prop = CyclePropagator::new(&w, w.period().unwrap(), 1e-10).unwrap();
        let v = [C64::new(0.3, -0.2), C64::new(0.1, 0.4)];
        let s = 0.4 * prop.span();
        let back = prop.solve(s, &prop.apply(s, &v));
        assert!((back[0] - v[0]).norm() < 1e-12 && (back[1] - v[1]).norm() < 1e-12);
    }

    #[test]
    fn passage_is_bracketed() {
        let w = DriveWaveform::<f64>::constant(0.0, 2.0, 1.0, 0.0);
        let prop = CyclePropagator::new(&w, 3.0, 1e-10).unwrap();
        let v = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let r = 0.5 * (1.0 + norm_sqr(&prop.apply(3.0, &v)));
        let s = prop.first_passage(&v, r, 0.0);
        assert!((norm_sqr(&prop.apply(s, &v)) - r).abs() < 1e-5);
    }

    #[test]
    fn rejects_fractional_span() {
        let w = DriveWaveform::<f64>::reference();
        assert!(CyclePropagator::new(&w, 0.5 * w.period().unwrap(), 1e-9).is_err());
    }
}
