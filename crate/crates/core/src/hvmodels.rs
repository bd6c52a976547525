//! Outcome models for a two-state measurement: the Born rule and a
//! phase-dependent family `P0 = clamp(α² + ε·g(φ), 0, 1)`, with the
//! statistics needed to detect such a dependence in phase-tagged data.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::scalar::wrap_phase;
use crate::stats;
use crate::timescales::TwoStateAmplitudes;

/// Largest allowed deviation amplitude.
pub const MAX_EPSILON: f64 = 0.5;
/// Tolerance on the mean of a user table.
pub const ZERO_MEAN_TOL: f64 = 1e-9;
/// Minimum sample size for [`detect_phase_dependence`].
pub const MIN_SAMPLES: usize = 100;

/// Zero-mean, 2π-periodic modulation `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Modulation {
    Cos,
    /// `sign(cos φ)`.
    Square,
    /// Values on a uniform grid over `[0, 2π)`, linearly interpolated and
    /// periodic.
    Table { values: Vec<f64> },
}

impl Modulation {
    pub fn table(values: Vec<f64>) -> Result<Self> {
        let m = Modulation::Table { values };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "hvmodels::Modulation";
        if let Modulation::Table { values } = self {
            if values.len() < 2 {
                return Err(Error::invalid(OP, "table needs at least two values"));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(OP, "table has non-finite values"));
            }
            // the trapezoid mean of a periodic piecewise-linear function is exact
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            if mean.abs() > ZERO_MEAN_TOL {
                return Err(Error::invalid(OP, format!("table mean {mean:e} is not zero")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, phi: f64) -> f64 {
        match self {
            Modulation::Cos => phi.cos(),
            Modulation::Square => {
                let c = phi.cos();
                if c > 0.0 {
                    1.0
                } else if c < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Modulation::Table { values } => {
                let n = values.len();
                let x = wrap_phase(phi) / TAU * n as f64;
                let k = (x.floor() as usize).min(n - 1);
                let f = x - k as f64;
                values[k] * (1.0 - f) + values[(k + 1) % n] * f
            }
        }
    }

    /// Points in `[0, 2π)` where `g(φ + φ0)` is not smooth.
    fn kinks(&self, phi0: f64) -> Vec<f64> {
        match self {
            Modulation::Cos => Vec::new(),
            Modulation::Square => vec![wrap_phase(TAU / 4.0 - phi0), wrap_phase(3.0 * TAU / 4.0 - phi0)],
            Modulation::Table { values } => {
                (0..values.len()).map(|k| wrap_phase(TAU * k as f64 / values.len() as f64 - phi0)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Born,
    PhaseDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementModel {
    pub kind: ModelKind,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_modulation")]
    pub g: Modulation,
    #[serde(default)]
    pub phi0: f64,
}

fn default_modulation() -> Modulation {
    Modulation::Cos
}

impl Default for MeasurementModel {
    fn default() -> Self {
        Self::born()
    }
}

impl MeasurementModel {
    pub fn born() -> Self {
        Self { kind: ModelKind::Born, epsilon: 0.0, g: Modulation::Cos, phi0: 0.0 }
    }

    pub fn phase_dependent(epsilon: f64, g: Modulation, phi0: f64) -> Result<Self> {
        let m = Self { kind: ModelKind::PhaseDependent, epsilon, g, phi0 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_EPSILON).contains(&self.epsilon) {
            return Err(Error::invalid("hvmodels::MeasurementModel", format!("epsilon {} not in [0, 0.5]", self.epsilon)));
        }
        if !self.phi0.is_finite() {
            return Err(Error::invalid("hvmodels::MeasurementModel", "phi0 must be finite"));
        }
        self.g.validate()
    }

    /// `α² + ε·g(φ + φ0)` before clamping.
    fn raw_p0(&self, alpha2: f64, phi: f64) -> f64 {
        match self.kind {
            ModelKind::Born => alpha2,
            ModelKind::PhaseDependent => alpha2 + self.epsilon * self.g.eval(phi + self.phi0),
        }
    }
}

/// `(P0, P1)` and whether clamping was needed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProbability {
    pub p0: f64,
    pub p1: f64,
    pub clamped: bool,
}

/// Outcome probabilities for population `alpha2` in |0⟩ and relative phase
/// `phi`. A basis state has no relative phase, so it follows the Born rule
/// under every model.
pub fn probability_at(alpha2: f64, phi: f64, model: &MeasurementModel) -> OutcomeProbability {
    if alpha2 <= 0.0 || alpha2 >= 1.0 {
        let p0 = alpha2.clamp(0.0, 1.0);
        return OutcomeProbability { p0, p1: 1.0 - p0, clamped: false };
    }
    let raw = model.raw_p0(alpha2, phi);
    let p0 = raw.clamp(0.0, 1.0);
    OutcomeProbability { p0, p1: 1.0 - p0, clamped: p0 != raw }
}

pub fn outcome_probability(state: &TwoStateAmplitudes<f64>, model: &MeasurementModel) -> OutcomeProbability {
    probability_at(state.populations().0, state.phi(), model)
}

/// Bernoulli draw: 0 with probability P0, else 1.
pub fn sample_at<R: Rng + ?Sized>(alpha2: f64, phi: f64, model: &MeasurementModel, rng: &mut R) -> u8 {
    let p0 = probability_at(alpha2, phi, model).p0;
    if rng.random::<f64>() < p0 {
        0
    } else {
        1
    }
}

pub fn sample_outcome<R: Rng + ?Sized>(state: &TwoStateAmplitudes<f64>, model: &MeasurementModel, rng: &mut R) -> u8 {
    sample_at(state.populations().0, state.phi(), model, rng)
}

/// Phase-averaged P0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseAverage {
    pub p0: f64,
    /// Clamping was active somewhere on the circle, so `p0` need not equal α².
    pub clamped: bool,
    /// `(1/2π) ∫ |raw − clamped| dφ`, an upper bound on `|p0 − α²|`.
    pub bias_bound: f64,
}

const PANELS: usize = 64;

fn gauss_legendre_8() -> ([f64; 8], [f64; 8]) {
    (
        [
            -0.960_289_856_497_536_2,
            -0.796_666_477_413_626_7,
            -0.525_532_409_916_329,
            -0.183_434_642_495_649_8,
            0.183_434_642_495_649_8,
            0.525_532_409_916_329,
            0.796_666_477_413_626_7,
            0.960_289_856_497_536_2,
        ],
        [
            0.101_228_536_290_376_26,
            0.222_381_034_453_374_47,
            0.313_706_645_877_887_3,
            0.362_683_783_378_362,
            0.362_683_783_378_362,
            0.313_706_645_877_887_3,
            0.222_381_034_453_374_47,
            0.101_228_536_290_376_26,
        ],
    )
}

/// `(1/2π) ∫₀^{2π} P0(α, φ) dφ` by piecewise Gauss–Legendre with panel
/// breaks at the kinks of `g` and of the clamp.
pub fn phase_averaged_probability(model: &MeasurementModel, alpha: f64) -> Result<PhaseAverage> {
    const OP: &str = "hvmodels::phase_averaged_probability";
    model.validate()?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(OP, "alpha must lie in [0, 1]"));
    }
    let a2 = alpha * alpha;
    if model.kind == ModelKind::Born {
        return Ok(PhaseAverage { p0: a2, clamped: false, bias_bound: 0.0 });
    }
    let mut breaks: Vec<f64> = (0..=PANELS).map(|k| TAU * k as f64 / PANELS as f64).collect();
    breaks.extend(model.g.kinks(model.phi0));
    if let Modulation::Cos = model.g {
        if model.epsilon > 0.0 {
            for level in [(1.0 - a2) / model.epsilon, -a2 / model.epsilon] {
                if level.abs() <= 1.0 {
                    let x = level.acos();
                    breaks.push(wrap_phase(x - model.phi0));
                    breaks.push(wrap_phase(-x - model.phi0));
                }
            }
        }
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let (nodes, weights) = gauss_legendre_8();
    let (mut sum, mut excess) = (0.0, 0.0);
    let mut clamped = false;
    for pair in breaks.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let half = (hi - lo) / 2.0;
        let mid = (lo + hi) / 2.0;
        for k in 0..8 {
            let phi = mid + half * nodes[k];
            let raw = model.raw_p0(a2, phi);
            let p = raw.clamp(0.0, 1.0);
            clamped |= p != raw;
            sum += weights[k] * half * p;
            excess += weights[k] * half * (raw - p).abs();
        }
    }
    Ok(PhaseAverage { p0: sum / TAU, clamped, bias_bound: excess / TAU })
}

/// One phase-tagged measurement record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTaggedOutcome {
    pub phi: f64,
    pub outcome: u8,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl PhaseTaggedOutcome {
    pub fn new(phi: f64, outcome: u8) -> Self {
        Self { phi: wrap_phase(phi), outcome, weight: 1.0 }
    }
}

/// First-harmonic test report. Estimates are `None` when the data are
/// degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvReport {
    pub epsilon_hat: Option<f64>,
    pub phi0_hat: Option<f64>,
    pub stderr: Option<f64>,
    pub p_value: Option<f64>,
    pub min_detectable_epsilon: Option<f64>,
    /// Mean of the outcome-0 indicator.
    pub p0_mean: f64,
    pub n: usize,
    pub phase_concentration_r: f64,
    pub degenerate: bool,
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let inv = invert3(a)?;
    Some(std::array::from_fn(|i| (0..3).map(|j| inv[i][j] * b[j]).sum()))
}

fn invert3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |i: usize, j: usize| {
        let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
        let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
        m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    let scale = m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).powi(3);
    if !(det.abs() > 1e-10 * scale) {
        return None;
    }
    Some(std::array::from_fn(|i| std::array::from_fn(|j| c(j, i) / det)))
}

/// Regresses the outcome-0 indicator on `[1, cos φ, sin φ]`. The amplitude of
/// the harmonic estimates `ε` for `g = cos`; the Wald statistic on the two
/// harmonic coefficients gives the p-value against `ε = 0`.
pub fn detect_phase_dependence(data: &[PhaseTaggedOutcome]) -> Result<HvReport> {
    const OP: &str = "hvmodels::detect_phase_dependence";
    if data.len() < MIN_SAMPLES {
        return Err(Error::invalid(OP, format!("need at least {MIN_SAMPLES} samples, got {}", data.len())));
    }
    if data.iter().any(|d| d.outcome > 1 || !d.phi.is_finite()) {
        return Err(Error::invalid(OP, "outcomes must be 0 or 1 and phases finite"));
    }
    let n = data.len();
    let phases: Vec<f64> = data.iter().map(|d| d.phi).collect();
    let r = stats::circular(&phases).unwrap().resultant;
    let y: Vec<f64> = data.iter().map(|d| if d.outcome == 0 { 1.0 } else { 0.0 }).collect();
    let p0_mean = y.iter().sum::<f64>() / n as f64;
    let mut report = HvReport {
        epsilon_hat: None,
        phi0_hat: None,
        stderr: None,
        p_value: None,
        min_detectable_epsilon: None,
        p0_mean,
        n,
        phase_concentration_r: r,
        degenerate: true,
    };
    let mut xtx = [[0.0; 3]; 3];
    let mut xty = [0.0; 3];
    for (d, yi) in data.iter().zip(&y) {
        let x = [1.0, d.phi.cos(), d.phi.sin()];
        for i in 0..3 {
            xty[i] += x[i] * yi;
            for j in 0..3 {
                xtx[i][j] += x[i] * x[j];
            }
        }
    }
    let (Some(inv), Some(beta)) = (invert3(xtx), solve3(xtx, xty)) else {
        return Ok(report);
    };
    let rss: f64 = data
        .iter()
        .zip(&y)
        .map(|(d, yi)| (yi - beta[0] - beta[1] * d.phi.cos() - beta[2] * d.phi.sin()).powi(2))
        .sum();
    let sigma2 = rss / (n - 3) as f64;
    let cov = |i: usize, j: usize| sigma2 * inv[i][j];
    let (a, b) = (beta[1], beta[2]);
    let eps = a.hypot(b);
    // Wald statistic on (a, b)
    let (caa, cab, cbb) = (cov(1, 1), cov(1, 2), cov(2, 2));
    let det = caa * cbb - cab * cab;
    if !(det > 0.0) {
        return Ok(report);
    }
    let wald = (cbb * a * a - 2.0 * cab * a * b + caa * b * b) / det;
    let p_value = ChiSquared::new(2.0).unwrap().sf(wald);
    let stderr = if eps > 0.0 {
        ((a * a * caa + 2.0 * a * b * cab + b * b * cbb) / (eps * eps)).sqrt()
    } else {
        ((caa + cbb) / 2.0).sqrt()
    };
    let z = stats::normal_quantile(0.975) + stats::normal_quantile(0.95);
    report.epsilon_hat = Some(eps);
    // P0 = α² + ε cos(φ + φ0) = α² + ε cos φ0 cos φ − ε sin φ0 sin φ
    report.phi0_hat = Some(wrap_phase((-b).atan2(a)));
    report.stderr = Some(stderr);
    report.p_value = Some(p_value);
    report.min_detectable_epsilon = Some(z * ((caa + cbb) / 2.0).sqrt());
    report.degenerate = false;
    Ok(report)
}

/// Binned χ² homogeneity test of the outcome-0 frequency across phase bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedReport {
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins_used: usize,
}

pub fn binned_chi_square(data: &[PhaseTaggedOutcome], bins: usize) -> Result<BinnedReport> {
    const OP: &str = "hvmodels::binned_chi_square";
    if data.len() < MIN_SAMPLES || bins < 2 {
        return Err(Error::invalid(OP, "need at least 100 samples and 2 bins"));
    }
    let mut n = vec![0.0; bins];
    let mut k = vec![0.0; bins];
    for d in data {
        let b = ((wrap_phase(d.phi) / TAU * bins as f64) as usize).min(bins - 1);
        n[b] += 1.0;
        if d.outcome == 0 {
            k[b] += 1.0;
        }
    }
    let p = k.iter().sum::<f64>() / n.iter().sum::<f64>();
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::Degenerate { op: OP, reason: "all outcomes identical".into() });
    }
    let mut chi = 0.0;
    let mut used = 0;
    for (ni, ki) in n.iter().zip(&k) {
        if *ni > 0.0 {
            chi += (ki - ni * p).powi(2) / (ni * p * (1.0 - p));
            used += 1;
        }
    }
    if used < 2 {
        return Err(Error::Degenerate { op: OP, reason: "all phases fall in one bin".into() });
    }
    let dof = used - 1;
    Ok(BinnedReport { chi_square: chi, dof, p_value: ChiSquared::new(dof as f64).unwrap().sf(chi), bins_used: used })
}

/// Synthetic phase-tagged data: uniform phases (or all at `locked`), outcomes
/// drawn from `model` at population `alpha2`.
pub fn synthesize<R: Rng + ?Sized>(
    model: &MeasurementModel,
    alpha2: f64,
    n: usize,
    locked: Option<f64>,
    rng: &mut R,
) -> Vec<PhaseTaggedOutcome> {
    (0..n)
        .map(|_| {
            let phi = locked.unwrap_or_else(|| rng.random::<f64>() * TAU);
            PhaseTaggedOutcome::new(phi, sample_at(alpha2, phi, model, rng))
        })
        .collect()
}
