use std::f64::consts::TAU;

use phasemeas::bloch::DriveWaveform;
use phasemeas::hvmodels::{detect_phase_dependence, MeasurementModel, Modulation};
use phasemeas::pulses::{find_phase_jump, PulseDesign};
use phasemeas::stats::{circular_linear_slope, ks_exponential};
use phasemeas::timescales::TwoStateAmplitudes;
use phasemeas::trajectories::*;

fn one() -> TwoStateAmplitudes<f64> {
    TwoStateAmplitudes::new(0.0, 0.0).unwrap()
}

fn design() -> PulseDesign<f64> {
    find_phase_jump(&DriveWaveform::reference(), 1e-6, 1e-10).unwrap()
}

fn pulsed(d: &PulseDesign<f64>, corrected: bool, first_only: bool, horizon: u64) -> Detector {
    Detector::pulsed(
        d,
        &PulsedOptions { horizon_cycles: horizon, stark_corrected: corrected, reference: PhaseReference::C1Branch, first_only, tol: 1e-10 },
    )
    .unwrap()
}

fn continuous(horizon_phases: f64) -> (DriveWaveform<f64>, Detector) {
    let w = matched_continuous(1.0, 1.0);
    let opts = ContinuousOptions {
        horizon: horizon_phases * TAU / w.omega_10,
        segment: None,
        reference: PhaseReference::C1Branch,
        first_only: false,
        tol: 1e-9,
    };
    let d = Detector::continuous(&w, &opts).unwrap();
    (w, d)
}

#[test]
fn abstract_waiting_times_are_exponential() {
    // p-values are uniform under the null, so a few of 20 seeds may fall below 0.01
    let d = Detector::abstract_two_level(2.5, 3.0, 1e9).unwrap();
    let passing = (0..20u64)
        .filter(|&seed| {
            let recs = run_ensemble(&one(), &d, &MeasurementModel::born(), seed, 10_000).unwrap();
            let t: Vec<f64> = recs.iter().map(|r| r.jump_times[0]).collect();
            ks_exponential(&t, 2.5).unwrap().p_value > 0.01
        })
        .count();
    assert!(passing >= 17, "{passing}/20");
}

#[test]
fn continuous_phases_are_uniform() {
    let (_, d) = continuous(10.0);
    let recs = run_ensemble(&one(), &d, &MeasurementModel::born(), 5, 10_000).unwrap();
    let s = phase_selectivity(&recs, 32).unwrap();
    assert!(s.concentration.resultant < 3.0 / (s.n_jumps as f64).sqrt() + 0.01);
    let expect = 1.0 / 32.0;
    let n = s.n_jumps as f64;
    let sigma = (expect * (1.0 - expect) / n).sqrt();
    // pooled jumps are weakly correlated within a trajectory, so allow 4σ
    for f in s.phase_histogram.frequencies() {
        assert!((f - expect).abs() < 4.0 * sigma, "{f}");
    }
}

#[test]
fn first_continuous_jump_alone_is_not_uniform() {
    // a single exponential waiting time with τ_m = τ_φ leaves R = 1/sqrt(1 + 4π²)
    let (_, d) = continuous(40.0);
    let recs = run_ensemble(&one(), &d, &MeasurementModel::born(), 6, 20_000).unwrap();
    let firsts: Vec<f64> = recs.iter().filter_map(|r| r.phase_at_jump.first().copied()).collect();
    let r = phasemeas::stats::circular(&firsts).unwrap().resultant;
    assert!(r > 0.05 && r < 0.3, "R {r}");
}

#[test]
fn photon_number_grows_linearly() {
    let (w, d) = continuous(30.0);
    let recs = run_ensemble(&one(), &d, &MeasurementModel::born(), 7, 10_000).unwrap();
    let tau = TAU / w.omega_10;
    let (t1, t2) = (10.0 * tau, 30.0 * tau);
    let slope = (mean_photons_at(&recs, t2) - mean_photons_at(&recs, t1)) / (t2 - t1);
    let expect = w.gamma2 * steady_state_p2(0.0, w.omega_r, w.gamma2);
    assert!((slope / expect - 1.0).abs() < 0.05, "slope {slope} vs {expect}");
}

#[test]
fn pulsed_jumps_sit_in_the_resonant_window() {
    let d = design();
    let det = pulsed(&d, false, true, 20_000);
    let recs = run_ensemble(&one(), &det, &MeasurementModel::born(), 8, 3000).unwrap();
    let f = window_fraction(&recs, d.period(), d.default_window()).unwrap();
    assert!(f >= 0.9, "fraction {f}");
}

#[test]
fn first_pulse_rate_matches_design() {
    let d = design();
    let det = pulsed(&d, false, true, 1);
    let n = 200_000u64;
    let recs = run_ensemble(&one(), &det, &MeasurementModel::born(), 9, n).unwrap();
    let k = recs.iter().filter(|r| !r.jump_times.is_empty()).count() as f64;
    let sigma = (d.p_scatter * n as f64).sqrt();
    assert!((k - d.p_scatter * n as f64).abs() < 3.0 * sigma, "{k} vs {}", d.p_scatter * n as f64);
}

#[test]
fn survival_follows_geometric_law() {
    let d = design();
    let det = pulsed(&d, false, true, 6000);
    let recs = run_ensemble(&one(), &det, &MeasurementModel::born(), 10, 4000).unwrap();
    let ns = [0, 500, 1000, 2000, 4000];
    for pt in survival_curve(&recs, d.period(), &ns).unwrap() {
        let expect = (1.0 - d.p_scatter).powi(pt.n as i32);
        assert!(expect >= pt.lo - 0.01 && expect <= pt.hi + 0.01, "{pt:?} vs {expect}");
    }
    assert_eq!(survival_curve(&recs, d.period(), &[0]).unwrap()[0].survival, 1.0);
}

#[test]
fn stark_drift_and_correction() {
    let d = design();
    let slope = |corrected: bool| {
        let det = pulsed(&d, corrected, true, 20_000);
        let period = det.span().unwrap();
        let recs = run_ensemble(&one(), &det, &MeasurementModel::born(), 11, 3000).unwrap();
        let ph: Vec<f64> = recs.iter().filter_map(|r| r.phase_at_jump.first().copied()).collect();
        let x: Vec<f64> = recs.iter().filter_map(|r| r.jump_times.first().map(|t| (t / period).floor())).collect();
        circular_linear_slope(&ph, &x, -0.03, 0.03, 601).unwrap()
    };
    let drift = slope(false);
    assert!((drift + d.stark_per_cycle).abs() < 0.1 * d.stark_per_cycle, "drift {drift}");
    let fixed = slope(true);
    assert!(fixed.abs() < 0.1 * d.stark_per_cycle, "corrected {fixed}");
}

#[test]
fn pulsed_pipeline_recovers_epsilon() {
    // outcome model applied at the phase of the first pulsed event
    let d = design();
    let det = pulsed(&d, false, true, 30_000);
    let model = MeasurementModel::phase_dependent(0.1, Modulation::Cos, 0.4).unwrap();
    // spread the preparation phase so the detected phases cover the circle
    let mut data = Vec::new();
    for k in 0..100u64 {
        let s = TwoStateAmplitudes::balanced(TAU * k as f64 / 100.0);
        let recs = run_ensemble(&s, &det, &model, 12 + k, 100).unwrap();
        data.extend(tagged_outcomes(&recs));
    }
    let r = detect_phase_dependence(&data).unwrap();
    let eps = r.epsilon_hat.unwrap();
    assert!((eps - 0.1).abs() < 3.0 * r.stderr.unwrap(), "{r:?}");
}

#[test]
fn jsonl_has_one_line_per_record() {
    let d = Detector::abstract_two_level(1.0, 1.0, 100.0).unwrap();
    let recs = run_ensemble(&TwoStateAmplitudes::balanced(0.0), &d, &MeasurementModel::born(), 1, 20).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &recs).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 20);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["mode"], "abstract-two-level");
    assert!(first["seed"].is_u64());
}
