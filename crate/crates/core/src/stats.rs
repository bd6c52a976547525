//! Circular statistics, histograms with binomial errors and goodness-of-fit
//! helpers used by the ensemble analyses.

use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Resultant length `R = |⟨e^{iφ}⟩|` and mean direction of a phase sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circular {
    pub resultant: f64,
    pub mean_direction: f64,
    pub n: usize,
}

impl Circular {
    /// Circular standard deviation `sqrt(−2 ln R)`.
    pub fn spread(&self) -> f64 {
        (-2.0 * self.resultant.max(f64::MIN_POSITIVE).ln()).max(0.0).sqrt()
    }
}

pub fn circular(phases: &[f64]) -> Option<Circular> {
    if phases.is_empty() {
        return None;
    }
    let (mut s, mut c) = (0.0, 0.0);
    for &p in phases {
        s += p.sin();
        c += p.cos();
    }
    let n = phases.len() as f64;
    // a lone unit vector has length one exactly
    let resultant = if phases.len() == 1 { 1.0 } else { (s / n).hypot(c / n).min(1.0) };
    Some(Circular { resultant, mean_direction: crate::scalar::wrap_phase(s.atan2(c)), n: phases.len() })
}

/// Slope `β` maximising `|Σ e^{i(φ_k − β x_k)}|` over a grid on `[lo, hi]`,
/// refined by golden section. Circular-linear regression.
pub fn circular_linear_slope(phases: &[f64], x: &[f64], lo: f64, hi: f64, grid: usize) -> Option<f64> {
    if phases.len() != x.len() || phases.is_empty() || grid < 3 || !(hi > lo) {
        return None;
    }
    let neg_r = |beta: f64| -> crate::Result<f64> {
        let (mut s, mut c) = (0.0, 0.0);
        for (p, xi) in phases.iter().zip(x) {
            let a = p - beta * xi;
            s += a.sin();
            c += a.cos();
        }
        Ok(-(s * s + c * c).sqrt())
    };
    let step = (hi - lo) / (grid - 1) as f64;
    let best = (0..grid)
        .map(|k| lo + step * k as f64)
        .min_by(|a, b| neg_r(*a).unwrap().partial_cmp(&neg_r(*b).unwrap()).unwrap())
        .unwrap();
    crate::pulses::golden_section(neg_r, best - step, best + step, step * 1e-9).ok().map(|r| r.0)
}

/// Fixed-width histogram on `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    /// Samples outside `[lo, hi)`.
    pub outside: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("stats::Histogram::new", "need bins > 0 and finite lo < hi"));
        }
        Ok(Self { lo, hi, counts: vec![0; bins], outside: 0 })
    }

    pub fn phase(bins: usize) -> Result<Self> {
        Self::new(0.0, TAU, bins)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins()).map(|k| self.lo + self.width() * k as f64).collect()
    }

    pub fn add(&mut self, x: f64) {
        if !(x >= self.lo && x < self.hi) {
            self.outside += 1;
            return;
        }
        let k = (((x - self.lo) / self.width()) as usize).min(self.bins() - 1);
        self.counts[k] += 1;
    }

    pub fn extend<I: IntoIterator<Item = f64>>(&mut self, xs: I) {
        for x in xs {
            self.add(x);
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin frequencies, summing to one over the in-range samples.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.total() as f64;
        if n == 0.0 {
            return vec![0.0; self.bins()];
        }
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Binomial standard error of each frequency, `sqrt(f(1−f)/N)`.
    pub fn errors(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.frequencies().iter().map(|f| if n > 0.0 { (f * (1.0 - f) / n).sqrt() } else { 0.0 }).collect()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "bin_lo,bin_hi,count,frequency,stderr")?;
        let edges = self.edges();
        for (k, (f, e)) in self.frequencies().iter().zip(self.errors()).enumerate() {
            writeln!(out, "{},{},{},{},{}", edges[k], edges[k + 1], self.counts[k], f, e)?;
        }
        Ok(())
    }
}

/// Kolmogorov–Smirnov one-sample result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Asymptotic Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS test of `samples` against a continuous CDF, with Stephens' small-sample
/// correction of the p-value.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::invalid("stats::ks_test", "empty sample"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    let p = kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
    Ok(KsResult { statistic: d, p_value: p, n: xs.len() })
}

/// KS test against an exponential law with the given mean.
pub fn ks_exponential(samples: &[f64], mean: f64) -> Result<KsResult> {
    if !(mean > 0.0) {
        return Err(Error::invalid("stats::ks_exponential", "mean must be positive"));
    }
    ks_test(samples, |x| if x <= 0.0 { 0.0 } else { -(-x / mean).exp_m1() })
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Mean and standard error of the mean.
pub fn mean_sem(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    Some((m, (v / n).sqrt()))
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_sample_is_concentrated() {
        assert_eq!(circular(&[1.234]).unwrap().resultant, 1.0);
        assert!(circular(&[]).is_none());
        let r = circular(&[0.0, std::f64::consts::PI]).unwrap();
        assert!(r.resultant < 1e-15);
    }

    #[test]
    fn kolmogorov_known_values() {
        // Q(1.36) ≈ 0.05, Q(1.63) ≈ 0.01
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.628) - 0.01).abs() < 5e-4);
        assert_eq!(kolmogorov_q(0.0), 1.0);
    }

    #[test]
    fn ks_rejects_wrong_mean() {
        let xs: Vec<f64> = (1..2000).map(|k| -(1.0 - k as f64 / 2000.0).ln()).collect();
        assert!(ks_exponential(&xs, 1.0).unwrap().p_value > 0.5);
        assert!(ks_exponential(&xs, 2.0).unwrap().p_value < 1e-6);
    }

    #[test]
    fn normal_quantiles() {
        assert!((normal_quantile(0.975) - 1.959964).abs() < 1e-5);
        assert!((normal_quantile(0.95) - 1.644854).abs() < 1e-5);
    }

    #[test]
    fn slope_recovered() {
        let x: Vec<f64> = (0..500).map(|k| k as f64).collect();
        let ph: Vec<f64> = x.iter().map(|x| crate::scalar::wrap_phase(0.3 - 0.0123 * x)).collect();
        let b = circular_linear_slope(&ph, &x, -0.05, 0.05, 2001).unwrap();
        assert!((b + 0.0123).abs() < 1e-9);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 1.96);
        assert!(lo < 0.3 && hi > 0.3);
        assert_eq!(wilson_interval(0, 0, 1.96), (0.0, 1.0));
    }

    proptest! {
        #[test]
        fn histogram_mass_is_one(xs in proptest::collection::vec(0.0f64..TAU, 1..400), bins in 1usize..64) {
            let mut h = Histogram::phase(bins).unwrap();
            h.extend(xs.iter().copied());
            let s: f64 = h.frequencies().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert_eq!(h.total() as usize, xs.len());
        }

        #[test]
        fn resultant_in_unit_interval(xs in proptest::collection::vec(-10.0f64..10.0, 1..200)) {
            let r = circular(&xs).unwrap().resultant;
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
