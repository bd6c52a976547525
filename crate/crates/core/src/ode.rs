//! Adaptive Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The state is a fixed-size array of real components. Discontinuities in the
//! right-hand side are handled by integrating piecewise between breakpoints:
//! each piece restarts the method, so no step straddles a breakpoint and the
//! breakpoint times are hit exactly.

use crate::error::OdeError;
use crate::scalar::Real;

// Butcher tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Error estimate (5th minus 4th order weights).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Step-size control settings.
#[derive(Debug, Clone, Copy)]
pub struct Options<T> {
    pub rtol: T,
    pub atol: T,
    pub h_max: Option<T>,
    pub max_steps: usize,
}

impl<T: Real> Options<T> {
    /// Same relative and absolute tolerance.
    pub fn with_tol(tol: T) -> Self {
        Self { rtol: tol, atol: tol, h_max: None, max_steps: 5_000_000 }
    }

    pub fn h_max(mut self, h: T) -> Self {
        self.h_max = Some(h);
        self
    }
}

/// One accepted step together with its interpolation coefficients.
#[derive(Debug, Clone)]
pub struct DenseStep<T, const N: usize> {
    pub t0: T,
    pub h: T,
    rcont: [[T; N]; 5],
}

impl<T: Real, const N: usize> DenseStep<T, N> {
    pub fn t1(&self) -> T {
        self.t0 + self.h
    }

    fn eval(&self, t: T) -> [T; N] {
        let theta = (t - self.t0) / self.h;
        let theta1 = T::one() - theta;
        let r = &self.rcont;
        std::array::from_fn(|i| r[0][i] + theta * (r[1][i] + theta1 * (r[2][i] + theta * (r[3][i] + theta1 * r[4][i]))))
    }
}

/// Continuous solution on `[t_start, t_end]`.
#[derive(Debug, Clone)]
pub struct DenseSolution<T, const N: usize> {
    steps: Vec<DenseStep<T, N>>,
    t_start: T,
    y_start: [T; N],
    y_end: [T; N],
    rejected: usize,
}

impl<T: Real, const N: usize> DenseSolution<T, N> {
    pub fn t_start(&self) -> T {
        self.t_start
    }

    pub fn t_end(&self) -> T {
        self.steps.last().map_or(self.t_start, |s| s.t1())
    }

    pub fn y_end(&self) -> [T; N] {
        self.y_end
    }

    pub fn accepted_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    pub fn steps(&self) -> &[DenseStep<T, N>] {
        &self.steps
    }

    /// Interpolated state. Times outside the covered range are clamped.
    pub fn eval(&self, t: T) -> [T; N] {
        if self.steps.is_empty() || t <= self.t_start {
            return self.y_start;
        }
        if t >= self.t_end() {
            return self.y_end;
        }
        // last step whose start is <= t
        let idx = self.steps.partition_point(|s| s.t0 <= t).saturating_sub(1);
        self.steps[idx].eval(t)
    }

    fn append(&mut self, other: DenseSolution<T, N>) {
        self.steps.extend(other.steps);
        self.y_end = other.y_end;
        self.rejected += other.rejected;
    }
}

fn axpy<T: Real, const N: usize>(y: &[T; N], h: T, terms: &[(f64, &[T; N])]) -> [T; N] {
    std::array::from_fn(|i| {
        let mut acc = T::zero();
        for (c, k) in terms {
            acc = acc + T::lit(*c) * k[i];
        }
        y[i] + h * acc
    })
}

fn initial_step<T: Real, const N: usize, F>(f: &mut F, t0: T, y0: &[T; N], k1: &[T; N], opts: &Options<T>, span: T) -> T
where
    F: FnMut(T, &[T; N]) -> [T; N],
{
    let sc = |i: usize, y: &[T; N]| opts.atol + opts.rtol * y[i].abs();
    let n = T::from_usize(N).unwrap();
    let d0 = ((0..N).map(|i| (y0[i] / sc(i, y0)).powi(2)).fold(T::zero(), |a, b| a + b) / n).sqrt();
    let d1 = ((0..N).map(|i| (k1[i] / sc(i, y0)).powi(2)).fold(T::zero(), |a, b| a + b) / n).sqrt();
    let small = T::lit(1e-5);
    let mut h0 = if d0 < small || d1 < small { T::lit(1e-6) } else { T::lit(0.01) * d0 / d1 };
    h0 = h0.min(span);
    let y1: [T; N] = std::array::from_fn(|i| y0[i] + h0 * k1[i]);
    let k2 = f(t0 + h0, &y1);
    let d2 = ((0..N).map(|i| ((k2[i] - k1[i]) / sc(i, y0)).powi(2)).fold(T::zero(), |a, b| a + b) / n).sqrt() / h0;
    let h1 = if d1.max(d2) <= T::lit(1e-15) {
        (h0 * T::lit(1e-3)).max(T::lit(1e-6))
    } else {
        (T::lit(0.01) / d1.max(d2)).powf(T::lit(0.2))
    };
    (T::lit(100.0) * h0).min(h1).min(span)
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (`t1 > t0`).
///
/// `observer` sees every accepted step end and may abort the integration by
/// returning an error.
pub fn solve<T, const N: usize, F, O>(
    mut f: F,
    t0: T,
    y0: [T; N],
    t1: T,
    opts: &Options<T>,
    mut observer: O,
) -> Result<DenseSolution<T, N>, OdeError>
where
    T: Real,
    F: FnMut(T, &[T; N]) -> [T; N],
    O: FnMut(T, &[T; N]) -> Result<(), OdeError>,
{
    let mut sol = DenseSolution { steps: Vec::new(), t_start: t0, y_start: y0, y_end: y0, rejected: 0 };
    if t1 <= t0 {
        return Ok(sol);
    }
    let span = t1 - t0;
    let h_max = opts.h_max.unwrap_or(span).min(span);
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut h = initial_step(&mut f, t, &y, &k1, opts, h_max);
    let mut last_rejected = false;
    let mut steps = 0usize;

    loop {
        if steps >= opts.max_steps {
            return Err(OdeError::ToleranceNotMet { t: t.as_f64(), steps });
        }
        steps += 1;
        let remaining = t1 - t;
        let last = h >= remaining * (T::one() - T::lit(1e-12));
        if last {
            h = remaining;
        }
        if h.abs() <= T::lit(16.0) * T::epsilon() * t.abs().max(T::one()) {
            return Err(OdeError::StepSizeUnderflow { t: t.as_f64(), h: h.as_f64() });
        }

        let k2 = f(t + T::lit(C2) * h, &axpy(&y, h, &[(A21, &k1)]));
        let k3 = f(t + T::lit(C3) * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(t + T::lit(C4) * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(t + T::lit(C5) * h, &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = f(t + h, &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
        let y_new = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let t_new = if last { t1 } else { t + h };
        let k7 = f(t_new, &y_new);

        let mut err = T::zero();
        for i in 0..N {
            let e = h * (T::lit(E1) * k1[i] + T::lit(E3) * k3[i] + T::lit(E4) * k4[i] + T::lit(E5) * k5[i] + T::lit(E6) * k6[i] + T::lit(E7) * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err = err + (e / sc).powi(2);
        }
        err = (err / T::from_usize(N).unwrap()).sqrt();
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            if h <= T::lit(1e-3) * span * T::epsilon() {
                return Err(OdeError::NonFinite { t: t.as_f64() });
            }
            h = h * T::lit(0.1);
            last_rejected = true;
            sol.rejected += 1;
            continue;
        }

        if err <= T::one() {
            let mut rcont = [[T::zero(); N]; 5];
            for i in 0..N {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                rcont[0][i] = y[i];
                rcont[1][i] = ydiff;
                rcont[2][i] = bspl;
                rcont[3][i] = ydiff - h * k7[i] - bspl;
                rcont[4][i] = h * (T::lit(D1) * k1[i] + T::lit(D3) * k3[i] + T::lit(D4) * k4[i] + T::lit(D5) * k5[i] + T::lit(D6) * k6[i] + T::lit(D7) * k7[i]);
            }
            sol.steps.push(DenseStep { t0: t, h: t_new - t, rcont });
            observer(t_new, &y_new)?;
            t = t_new;
            y = y_new;
            k1 = k7;
            if last {
                sol.y_end = y;
                return Ok(sol);
            }
            let mut fac = T::lit(0.9) * err.max(T::lit(1e-10)).powf(T::lit(-0.2));
            fac = fac.min(T::lit(10.0)).max(T::lit(0.2));
            if last_rejected {
                fac = fac.min(T::one());
            }
            h = (h * fac).min(h_max);
            last_rejected = false;
        } else {
            let fac = (T::lit(0.9) * err.powf(T::lit(-0.2))).max(T::lit(0.2));
            h = h * fac;
            last_rejected = true;
            sol.rejected += 1;
        }
    }
}

/// Integrates through a sorted list of interior breakpoints, restarting at
/// each. `f` receives the index of the current piece.
pub fn solve_piecewise<T, const N: usize, F, O>(
    mut f: F,
    t0: T,
    y0: [T; N],
    t1: T,
    breakpoints: &[T],
    opts: &Options<T>,
    mut observer: O,
) -> Result<DenseSolution<T, N>, OdeError>
where
    T: Real,
    F: FnMut(usize, T, &[T; N]) -> [T; N],
    O: FnMut(T, &[T; N]) -> Result<(), OdeError>,
{
    let mut edges = vec![t0];
    edges.extend(breakpoints.iter().copied().filter(|&b| b > t0 && b < t1));
    edges.push(t1);
    let mut out: Option<DenseSolution<T, N>> = None;
    let mut y = y0;
    for (piece, w) in edges.windows(2).enumerate() {
        let part = solve(|t, y: &[T; N]| f(piece, t, y), w[0], y, w[1], opts, &mut observer)?;
        y = part.y_end();
        match out.as_mut() {
            None => out = Some(part),
            Some(acc) => acc.append(part),
        }
    }
    Ok(out.expect("at least one piece"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_check<T, const N: usize>(_: T, _: &[T; N]) -> Result<(), OdeError> {
        Ok(())
    }

    #[test]
    fn exponential_decay_accuracy() {
        let opts = Options::with_tol(1e-10);
        let sol = solve(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], 5.0, &opts, no_check).unwrap();
        assert!((sol.y_end()[0] - (-5.0f64).exp()).abs() < 1e-9);
        for i in 0..=200 {
            let t = 5.0 * i as f64 / 200.0;
            assert!((sol.eval(t)[0] - (-t).exp()).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let opts = Options::with_tol(1e-9);
        let sol = solve(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [0.0, 1.0], 20.0, &opts, no_check).unwrap();
        let worst = (0..=1000)
            .map(|i| {
                let t = 20.0 * i as f64 / 1000.0;
                (sol.eval(t)[0] - t.sin()).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "worst {worst}");
    }

    #[test]
    fn f32_backend() {
        let opts = Options::with_tol(1e-5f32);
        let sol = solve(|_, y: &[f32; 1]| [-2.0 * y[0]], 0.0f32, [1.0f32], 1.0, &opts, no_check).unwrap();
        assert!((sol.y_end()[0] - (-2.0f32).exp()).abs() < 1e-4);
    }

    #[test]
    fn breakpoints_are_hit_exactly() {
        // y' = +1 before t = 1, -1 after.
        let opts = Options::with_tol(1e-10);
        let mut seen = Vec::new();
        let sol = solve_piecewise(
            |piece, _, _y: &[f64; 1]| [if piece == 0 { 1.0 } else { -1.0 }],
            0.0,
            [0.0],
            2.0,
            &[1.0],
            &opts,
            |t, _| {
                seen.push(t);
                Ok(())
            },
        )
        .unwrap();
        assert!(seen.contains(&1.0));
        assert!((sol.eval(1.0)[0] - 1.0).abs() < 1e-12);
        assert!(sol.y_end()[0].abs() < 1e-12);
    }

    #[test]
    fn observer_can_abort() {
        let opts = Options::with_tol(1e-8);
        let err = solve(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], 10.0, &opts, |t, y| {
            if y[0] > 10.0 {
                Err(OdeError::InvariantViolated { t, what: "blew up".into() })
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert!(matches!(err, OdeError::InvariantViolated { .. }));
    }

    #[test]
    fn finite_time_blowup_reports_failure() {
        // y' = y², y(0)=1 blows up at t = 1.
        let opts = Options::with_tol(1e-8);
        let err = solve(|_, y: &[f64; 1]| [y[0] * y[0]], 0.0, [1.0], 2.0, &opts, no_check).unwrap_err();
        assert!(
            matches!(err, OdeError::StepSizeUnderflow { t, .. } | OdeError::NonFinite { t } | OdeError::ToleranceNotMet { t, .. } if (t - 1.0).abs() < 1e-2),
            "{err:?}"
        );
    }
}
