//! Scenario runners. Each returns its artifacts in memory with a summary, so
//! that sweeps can reuse them without touching the disk.

use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex;
use phasemeas::bloch::{self, AtomState};
use phasemeas::hvmodels::{self, PhaseTaggedOutcome};
use phasemeas::pulses::{self, PulseDesign};
use phasemeas::rng;
use phasemeas::selection::{self, SelectionScheme};
use phasemeas::stats::{self, Histogram};
use phasemeas::timescales::TwoStateAmplitudes;
use phasemeas::trajectories::{self as traj, ContinuousOptions, Detector, Mode, PulsedOptions, TrajectoryRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{self, HvSource, RunConfig, Scenario, Target};
use crate::error::CliError;
use crate::output::{Artifact, Csv};
use crate::svg::{self, Series};

const TIME: &str = "time";
const RATE: &str = "rad/time";

pub struct Outcome {
    pub summary: Value,
    pub artifacts: Vec<Artifact>,
    pub failures: Vec<String>,
}

#[derive(Default)]
struct Checks {
    rows: Vec<Value>,
    failures: Vec<String>,
}

impl Checks {
    fn target(&mut self, name: &str, value: f64, target: &Option<Target>, relative: bool) {
        let Some(t) = target else { return };
        let err = if relative { (value / t.value - 1.0).abs() } else { (value - t.value).abs() };
        let pass = err <= t.tol;
        self.rows.push(json!({"check": name, "value": value, "target": t.value, "tol": t.tol, "pass": pass}));
        if !pass {
            self.failures.push(format!("{name} = {value}, expected {} ± {}{}", t.value, t.tol, if relative { " (relative)" } else { "" }));
        }
    }

    fn at_most(&mut self, name: &str, value: f64, limit: Option<f64>) {
        let Some(l) = limit else { return };
        let pass = value <= l;
        self.rows.push(json!({"check": name, "value": value, "max": l, "pass": pass}));
        if !pass {
            self.failures.push(format!("{name} = {value} exceeds {l}"));
        }
    }

    fn at_least(&mut self, name: &str, value: f64, limit: Option<f64>) {
        let Some(l) = limit else { return };
        let pass = value >= l;
        self.rows.push(json!({"check": name, "value": value, "min": l, "pass": pass}));
        if !pass {
            self.failures.push(format!("{name} = {value} below {l}"));
        }
    }

    fn finish(self, mut summary: Map<String, Value>, artifacts: Vec<Artifact>) -> Outcome {
        if !self.rows.is_empty() {
            summary.insert("checks".into(), Value::Array(self.rows));
        }
        Outcome { summary: Value::Object(summary), artifacts, failures: self.failures }
    }
}

fn svg_artifact(name: &str, title: &str, x: &str, y: &str, series: Vec<Series>) -> Artifact {
    Artifact::text(name, svg::line_plot(title, x, y, &series))
}

fn buffer<F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>>(f: F) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

fn state0(cfg: &RunConfig) -> Result<TwoStateAmplitudes<f64>, CliError> {
    Ok(TwoStateAmplitudes::new(cfg.state.alpha, cfg.state.phi)?)
}

fn design(cfg: &RunConfig) -> Result<PulseDesign<f64>, CliError> {
    let w = cfg.waveform.waveform();
    let p = &cfg.pulse;
    Ok(match p.jump_phase {
        Some(theta) => pulses::design_with_jump(&w, theta, p.tol)?,
        None => pulses::find_phase_jump_with_grid(&w, p.search_tol, p.grid, p.tol)?,
    })
}

fn pulsed_detector(cfg: &RunConfig, d: &PulseDesign<f64>, first_only: bool) -> Result<Detector, CliError> {
    let t = &cfg.trajectories;
    let opts = PulsedOptions {
        horizon_cycles: t.horizon_cycles,
        stark_corrected: t.stark_corrected,
        reference: t.reference,
        first_only,
        tol: t.tol,
    };
    Ok(Detector::pulsed(d, &opts)?)
}

fn continuous_detector(cfg: &RunConfig) -> Result<Detector, CliError> {
    let t = &cfg.trajectories;
    let w = traj::matched_continuous(t.continuous_omega_r, cfg.waveform.gamma2);
    let opts = ContinuousOptions {
        horizon: t.horizon_periods * TAU / w.omega_10,
        segment: None,
        reference: t.reference,
        first_only: t.first_only,
        tol: t.tol,
    };
    Ok(Detector::continuous(&w, &opts)?)
}

fn abstract_detector(cfg: &RunConfig) -> Result<Detector, CliError> {
    let t = &cfg.trajectories;
    let horizon = t.horizon_periods * TAU / t.abstract_omega_10.abs().max(f64::MIN_POSITIVE);
    Ok(Detector::abstract_two_level(t.tau_m, t.abstract_omega_10, horizon)?)
}

pub fn run(cfg: &RunConfig, points_dir: Option<&Path>) -> Result<Outcome, CliError> {
    let mut out = match cfg.scenario {
        Scenario::Integrate => integrate(cfg),
        Scenario::FindJump => find_jump(cfg, false),
        Scenario::Fig3 => find_jump(cfg, true),
        Scenario::Trajectories => trajectories(cfg),
        Scenario::Selection => selection_scheme(cfg),
        Scenario::HvTest => hv_test(cfg),
        Scenario::Sweep => sweep(cfg, points_dir),
        Scenario::Fig1 => fig1(cfg),
    }?;
    let mut text = serde_json::to_string_pretty(&out.summary).expect("summary serialises");
    text.push('\n');
    out.artifacts.push(Artifact::text("summary.json", text));
    Ok(out)
}

fn integrate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let ic = &cfg.integrate;
    let mut w = cfg.waveform.waveform();
    if ic.designed_jumps {
        w = design(cfg)?.periodic_waveform(ic.n_cycles);
    }
    let samples = match bloch::cycle_grid(&w, ic.n_cycles, ic.per_cycle) {
        Some(s) => s,
        None => {
            if !(w.omega_r > 0.0) {
                return Err(CliError::Config("integrate: an unmodulated drive needs omega_r > 0".into()));
            }
            let span = ic.n_cycles as f64 * TAU / w.omega_r;
            bloch::uniform_grid(0.0, span, ic.n_cycles * ic.per_cycle + 1)
        }
    };
    let mut s0 = AtomState::from_two_state(&state0(cfg)?);
    if ic.density {
        s0 = s0.to_density();
    }
    let series = bloch::integrate(&s0, &w, &samples, ic.tol)?;
    let bytes = buffer(|b| series.write_csv(b, &w));
    let n_amp = if ic.density { 9 } else { 6 };
    let mut units = vec![TIME];
    units.extend(std::iter::repeat_n("1", n_amp + 1));
    units.extend([RATE, "rad"]);
    let last = series.states.last().expect("non-empty grid");
    let p2_max = series.p2.iter().copied().fold(0.0, f64::max);
    let mut summary = Map::new();
    summary.insert("n_samples".into(), json!(series.len()));
    summary.insert("p2_final".into(), json!(last.p2()));
    summary.insert("p2_max".into(), json!(p2_max));
    summary.insert("norm_final".into(), json!(last.norm_sqr()));
    let points: Vec<(f64, f64)> = series.times.iter().copied().zip(series.p2.iter().copied()).collect();
    let artifacts = vec![
        Artifact::csv("evolution.csv", bytes, &units),
        svg_artifact("evolution.svg", "Excited population", "t", "P2", vec![Series::new("P2", points)]),
    ];
    Ok(Checks::default().finish(summary, artifacts))
}

fn design_summary(cfg: &RunConfig, d: &PulseDesign<f64>, checks: &mut Checks) -> Result<Map<String, Value>, CliError> {
    let prob = pulses::per_pulse_probability(d, cfg.pulse.tol)?;
    let mut s = Map::new();
    s.insert("jump_phase".into(), json!(d.jump_phase));
    s.insert("jump_time".into(), json!(d.jump_time));
    s.insert("period".into(), json!(d.period()));
    s.insert("residual_p2".into(), json!(d.residual_p2));
    s.insert("p_scatter".into(), json!(d.p_scatter));
    s.insert("p_scatter_norm_loss".into(), json!(prob.from_norm_loss));
    s.insert("weak_scatter_warning".into(), json!(prob.weak_scatter_warning));
    s.insert("stark_per_cycle".into(), json!(d.stark_per_cycle));
    s.insert("multimodal".into(), json!(d.diagnostics.multimodal));
    s.insert("degenerate".into(), json!(d.diagnostics.degenerate));
    if let Ok(b) = pulses::pulses_for_measurement(d.p_scatter, 0.99) {
        s.insert("expected_pulses".into(), json!(b.expected_pulses));
        s.insert("pulses_for_99_percent".into(), json!(b.threshold_pulses));
    }
    if let Ok(c) = pulses::corrected_modulation(&d.base, d.stark_per_cycle, d.base.nu_10()) {
        s.insert("nu_mod_corrected".into(), json!(c.nu_mod_corrected));
        s.insert("modulation_fractional_change".into(), json!(c.fractional_change));
    }
    let ck = &cfg.check;
    checks.target("jump_phase", d.jump_phase, &ck.jump_phase, false);
    checks.target("p_scatter", d.p_scatter, &ck.p_scatter, true);
    checks.target("stark_per_cycle", d.stark_per_cycle, &ck.stark_per_cycle, false);
    Ok(s)
}

fn find_jump(cfg: &RunConfig, figure: bool) -> Result<Outcome, CliError> {
    let d = design(cfg)?;
    let mut checks = Checks::default();
    let summary = design_summary(cfg, &d, &mut checks)?;
    let mut artifacts = vec![Artifact::text("design.toml", d.to_toml()?)];
    let p = &cfg.pulse;
    if cfg.pulse.jump_phase.is_none() && p.landscape_points > 0 {
        let scan = pulses::landscape(&d.base.coherent(), d.period(), d.jump_time, p.landscape_points, p.tol)?;
        artifacts.push(Artifact::csv("landscape.csv", buffer(|b| pulses::write_landscape_csv(b, &scan)), &["rad", "1"]));
        artifacts.push(svg_artifact(
            "landscape.svg",
            "Residual excitation after one cycle",
            "jump phase (rad)",
            "P2(T)",
            vec![Series::new("residual", scan)],
        ));
    }
    if figure {
        artifacts.extend(fig3_extras(cfg, &d)?);
    }
    Ok(checks.finish(summary, artifacts))
}

fn fig3_extras(cfg: &RunConfig, d: &PulseDesign<f64>) -> Result<Vec<Artifact>, CliError> {
    let (ic, p) = (&cfg.integrate, &cfg.pulse);
    let z = Complex::new(0.0, 0.0);
    let one = [z, Complex::new(1.0, 0.0), z];
    let period = d.period();
    let n = ic.n_cycles.max(1);
    let span = period * n as f64;
    let with = bloch::evolve_pure(one, &d.periodic_waveform(n).coherent(), 0.0, span, p.tol)?;
    let without = bloch::evolve_pure(one, &d.base.coherent(), 0.0, span, p.tol)?;
    let grid = bloch::uniform_grid(0.0, span, n * ic.per_cycle + 1);
    let mut csv = Csv::new("p2.csv", &[("t", TIME), ("delta", RATE), ("p2", "1"), ("p2_no_jump", "1")]);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for &t in &grid {
        let (pw, po) = (with.p2(t), without.p2(t));
        csv.row(&[t, bloch::detuning_at(&d.base, t), pw, po]);
        a.push((t, pw));
        b.push((t, po));
    }
    let mut out = vec![
        csv.finish(),
        svg_artifact("p2.svg", "Excited population over modulation cycles", "t", "P2", vec![Series::new("with jump", a), Series::new("no jump", b)]),
    ];

    let stride = (p.cumulative_max / 200).max(1);
    let cum = buffer(|w| pulses::write_cumulative_csv(w, d.p_scatter, p.cumulative_max, stride));
    let pts: Vec<(f64, f64)> =
        (0..=p.cumulative_max / stride).map(|k| k * stride).map(|n| (n as f64, pulses::cumulative_probability(d.p_scatter, n))).collect();
    out.push(Artifact::csv("cumulative.csv", cum, &["1", "1"]));
    out.push(svg_artifact("cumulative.svg", "Measurement probability after n pulses", "n", "P", vec![Series::new("1-(1-p)^n", pts)]));

    let m = p.stark_cycles.max(1);
    let evo = bloch::evolve_pure(one, &d.periodic_waveform(m).coherent(), 0.0, period * m as f64, p.tol)?;
    let mut csv = Csv::new("stark.csv", &[("cycle", "1"), ("phase_lag", "rad"), ("linear", "rad")]);
    let (mut lag, mut prev) = (0.0, Complex::new(1.0, 0.0));
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for k in 0..=m {
        let c1 = evo.amplitudes(period * k as f64)[1];
        if k > 0 {
            lag -= (c1 * prev.conj()).arg();
        }
        prev = c1;
        let lin = d.stark_per_cycle * k as f64;
        csv.row(&[k as f64, lag, lin]);
        a.push((k as f64, lag));
        b.push((k as f64, lin));
    }
    out.push(csv.finish());
    out.push(svg_artifact(
        "stark.svg",
        "Light-shift phase lag",
        "cycle",
        "lag (rad)",
        vec![Series::new("integrated", a), Series::new("per-cycle x k", b)],
    ));
    Ok(out)
}

fn histogram_artifacts(name: &str, title: &str, x: &str, h: &Histogram) -> Vec<Artifact> {
    let unit = if x.contains("rad") { "rad" } else { TIME };
    let bytes = buffer(|b| h.write_csv(b));
    let w = h.width();
    let pts: Vec<(f64, f64)> = h.edges().windows(2).zip(h.frequencies()).map(|(e, f)| ((e[0] + e[1]) / 2.0, f / w)).collect();
    vec![
        Artifact::csv(format!("{name}.csv"), bytes, &[unit, unit, "1", "1", "1"]),
        svg_artifact(&format!("{name}.svg"), title, x, "density", vec![Series::new("empirical", pts)]),
    ]
}

fn jsonl(name: &str, records: &[TrajectoryRecord]) -> Artifact {
    Artifact::text(name, String::from_utf8(buffer(|b| traj::write_jsonl(b, records))).expect("utf-8"))
}

fn trajectories(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let t = &cfg.trajectories;
    let e = &cfg.ensemble;
    let s0 = state0(cfg)?;
    let d = match t.mode {
        Mode::Pulsed => Some(design(cfg)?),
        _ => None,
    };
    let det = match t.mode {
        Mode::Pulsed => pulsed_detector(cfg, d.as_ref().unwrap(), t.first_only)?,
        Mode::Continuous => continuous_detector(cfg)?,
        Mode::Abstract => abstract_detector(cfg)?,
        Mode::Selection => return Err(CliError::Config("trajectories: use the selection scenario for mode \"selection\"".into())),
    };
    let recs = traj::run_ensemble(&s0, &det, &cfg.model, e.seed, e.n_trajectories)?;
    let mut checks = Checks::default();
    let mut s = Map::new();
    s.insert("mode".into(), json!(t.mode));
    s.insert("n_records".into(), json!(recs.len()));
    let measured = recs.iter().filter(|r| r.outcome == Some(1)).count();
    let dark = recs.iter().filter(|r| r.outcome == Some(0)).count();
    s.insert("n_outcome_1".into(), json!(measured));
    s.insert("n_outcome_0".into(), json!(dark));
    s.insert("n_unmeasured".into(), json!(recs.len() - measured - dark));
    let mut artifacts = vec![jsonl("records.jsonl", &recs)];
    let n_jumps: usize = recs.iter().map(|r| r.jump_times.len()).sum();
    s.insert("n_jumps".into(), json!(n_jumps));
    if n_jumps > 0 {
        let st = traj::phase_selectivity(&recs, t.bins)?;
        s.insert("concentration_r".into(), json!(st.concentration.resultant));
        s.insert("mean_direction".into(), json!(st.concentration.mean_direction));
        s.insert("small_sample".into(), json!(st.small_sample));
        checks.at_most("concentration_r", st.concentration.resultant, cfg.check.max_concentration);
        artifacts.extend(histogram_artifacts("phase_histogram", "Two-state phase at each jump", "phase (rad)", &st.phase_histogram));
        artifacts.extend(histogram_artifacts("waiting_histogram", "Time to first jump", "t", &st.waiting_histogram));
        if let Detector::Abstract { tau_m, .. } = det {
            let waits: Vec<f64> = recs.iter().filter_map(|r| r.jump_times.first().copied()).collect();
            if let Ok(ks) = stats::ks_exponential(&waits, tau_m) {
                s.insert("ks_statistic".into(), json!(ks.statistic));
                s.insert("ks_p_value".into(), json!(ks.p_value));
            }
        }
    }
    if let (Some(d), Some(span)) = (&d, det.span()) {
        let (w0, w1) = d.default_window();
        let scale = span / d.period();
        if let Some(f) = traj::window_fraction(&recs, span, (w0 * scale, w1 * scale)) {
            s.insert("window_fraction".into(), json!(f));
            checks.at_least("window_fraction", f, cfg.check.min_window_fraction);
        }
        let firsts: Vec<(f64, f64)> = recs
            .iter()
            .filter_map(|r| Some(((r.jump_times.first()? / span).floor(), *r.phase_at_jump.first()?)))
            .collect();
        if firsts.len() >= 2 {
            let (x, ph): (Vec<f64>, Vec<f64>) = firsts.into_iter().unzip();
            let range = (3.0 * d.stark_per_cycle.abs()).max(0.03);
            if let Some(slope) = stats::circular_linear_slope(&ph, &x, -range, range, 601) {
                s.insert("phase_drift_per_cycle".into(), json!(slope));
            }
        }
        let step = (t.horizon_cycles / 50).max(1);
        let ns: Vec<u64> = (0..=t.horizon_cycles / step).map(|k| k * step).collect();
        let curve = traj::survival_curve(&recs, span, &ns)?;
        let mut csv = Csv::new("survival.csv", &[("n", "1"), ("survival", "1"), ("lo", "1"), ("hi", "1"), ("geometric", "1")]);
        for c in &curve {
            csv.row(&[c.n as f64, c.survival, c.lo, c.hi, (1.0 - d.p_scatter).powf(c.n as f64)]);
        }
        artifacts.push(csv.finish());
    }
    Ok(checks.finish(s, artifacts))
}

fn selection_scheme(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let sc = &cfg.selection;
    let scheme = SelectionScheme::new(sc.q_dark, sc.gamma2, sc.nu10, sc.tau_m)?;
    let s0 = state0(cfg)?;
    let recs = selection::run_selection(&s0, &scheme, &cfg.model, cfg.ensemble.seed, cfg.ensemble.n_trajectories)?;
    let counts: Vec<f64> = recs.iter().filter(|r| r.outcome == Some(0)).map(|r| r.n_photons as f64).collect();
    let law = selection::photon_count_distribution(&scheme, true)?;
    let mut s = Map::new();
    s.insert("n_records".into(), json!(recs.len()));
    s.insert("n_bright".into(), json!(counts.len()));
    s.insert("expected_mean_photons".into(), json!(law.mean()));
    if let Some((mean, sem)) = stats::mean_sem(&counts) {
        s.insert("mean_photons".into(), json!(mean));
        s.insert("mean_photons_sem".into(), json!(sem));
    }
    let phases: Vec<f64> = recs.iter().filter_map(|r| r.decision_phase).collect();
    let mut artifacts = vec![jsonl("records.jsonl", &recs)];
    if let Some(c) = stats::circular(&phases) {
        s.insert("decision_phase_r".into(), json!(c.resultant));
        s.insert("decision_phase_spread".into(), json!(c.spread()));
        let mut h = Histogram::phase(sc.bins)?;
        h.extend(phases);
        artifacts.extend(histogram_artifacts("phase_histogram", "Two-state phase at first scatter", "phase (rad)", &h));
    }
    s.insert("tau_phi".into(), json!(scheme.tau_phi()));
    s.insert("expected_r".into(), json!(selection::first_scatter_concentration(scheme.tau_m, scheme.tau_phi())));
    let max_n = counts.iter().copied().fold(0.0, f64::max) as u64;
    let mut csv = Csv::new("photon_counts.csv", &[("n", "1"), ("count", "1"), ("frequency", "1"), ("pmf", "1")]);
    for n in 1..=max_n {
        let c = counts.iter().filter(|&&x| x as u64 == n).count();
        csv.row(&[n as f64, c as f64, c as f64 / counts.len().max(1) as f64, law.pmf(n)]);
    }
    artifacts.push(csv.finish());
    let d = design(cfg)?;
    let r = selection::pulse_concentration(&d, cfg.pulse.tol)?;
    let cmp = selection::scheme_compare(&d, r, &scheme)?;
    let mut text = serde_json::to_string_pretty(&cmp).expect("comparison serialises");
    text.push('\n');
    artifacts.push(Artifact::text("comparison.json", text));
    Ok(Checks::default().finish(s, artifacts))
}

/// Groups of preparation phases used to spread pulsed data over the circle.
const PHASE_GROUPS: u64 = 100;

fn hv_data(cfg: &RunConfig) -> Result<Vec<PhaseTaggedOutcome>, CliError> {
    let hv = &cfg.hv;
    let seed = cfg.ensemble.seed;
    if !(0.0..=1.0).contains(&hv.alpha2) {
        return Err(CliError::Config(format!("hv.alpha2 = {} not in [0, 1]", hv.alpha2)));
    }
    match hv.source {
        HvSource::Synthetic => Ok(hvmodels::synthesize(&cfg.model, hv.alpha2, hv.n as usize, None, &mut rng::stream(seed, 0))),
        HvSource::Pulsed => {
            let d = design(cfg)?;
            let det = pulsed_detector(cfg, &d, true)?;
            let per = hv.n.div_ceil(PHASE_GROUPS);
            let groups: Vec<Vec<PhaseTaggedOutcome>> = (0..PHASE_GROUPS)
                .map(|k| {
                    let s = TwoStateAmplitudes::new(hv.alpha2.sqrt(), TAU * k as f64 / PHASE_GROUPS as f64)?;
                    let recs = traj::run_ensemble(&s, &det, &cfg.model, rng::sub_seed(seed, k), per)?;
                    Ok(traj::tagged_outcomes(&recs))
                })
                .collect::<Result<_, phasemeas::Error>>()?;
            Ok(groups.concat())
        }
    }
}

fn hv_test(cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.model.validate()?;
    let hv = &cfg.hv;
    let data = hv_data(cfg)?;
    let report = hvmodels::detect_phase_dependence(&data)?;
    let avg = hvmodels::phase_averaged_probability(&cfg.model, hv.alpha2.sqrt())?;
    let mut s = Map::new();
    s.insert("report".into(), serde_json::to_value(&report).expect("report serialises"));
    if let Ok(b) = hvmodels::binned_chi_square(&data, hv.bins) {
        s.insert("binned".into(), serde_json::to_value(b).expect("binned serialises"));
    }
    s.insert("phase_averaged_p0".into(), json!(avg.p0));
    s.insert("clamped".into(), json!(avg.clamped));
    let mut checks = Checks::default();
    if hv.calibration {
        let p = report.p_value.unwrap_or(0.0);
        let pass = p > 0.01;
        checks.rows.push(json!({"check": "calibration", "p_value": p, "min": 0.01, "pass": pass}));
        if !pass {
            checks.failures.push(format!("calibration run rejected the null: p = {p} <= 0.01"));
        }
    }
    let mut h0 = vec![(0u64, 0u64); hv.bins.max(1)];
    let width = TAU / h0.len() as f64;
    for d in &data {
        let k = ((d.phi / width) as usize).min(h0.len() - 1);
        h0[k].1 += 1;
        if d.outcome == 0 {
            h0[k].0 += 1;
        }
    }
    let mut csv = Csv::new("outcome_vs_phase.csv", &[("phi_lo", "rad"), ("phi_hi", "rad"), ("n", "1"), ("p0", "1"), ("stderr", "1"), ("model_p0", "1")]);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (k, &(zeros, n)) in h0.iter().enumerate() {
        let lo = k as f64 * width;
        let mid = lo + width / 2.0;
        let f = if n > 0 { zeros as f64 / n as f64 } else { f64::NAN };
        let se = if n > 0 { (f * (1.0 - f) / n as f64).sqrt() } else { f64::NAN };
        let m = hvmodels::probability_at(hv.alpha2, mid, &cfg.model).p0;
        csv.row(&[lo, lo + width, n as f64, f, se, m]);
        a.push((mid, f));
        b.push((mid, m));
    }
    let mut tagged = String::new();
    for d in &data {
        tagged.push_str(&serde_json::to_string(d).expect("record serialises"));
        tagged.push('\n');
    }
    let artifacts = vec![
        Artifact::text("tagged.jsonl", tagged),
        csv.finish(),
        svg_artifact("outcome_vs_phase.svg", "Outcome-0 frequency by phase", "phase (rad)", "P0", vec![Series::new("data", a), Series::new("model", b)]),
    ];
    Ok(checks.finish(s, artifacts))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PointRecord {
    index: usize,
    assignments: Vec<(String, f64)>,
    config_hash: String,
    summary: Value,
}

fn point_config(cfg: &RunConfig, base: &toml::Table, index: usize, assignments: &[(String, f64)]) -> Result<RunConfig, CliError> {
    let mut table = base.clone();
    table.remove("sweep");
    table.insert("scenario".into(), toml::Value::String(cfg.sweep.target.name().into()));
    for (key, v) in assignments {
        let path: Vec<String> = key.split('.').map(str::to_string).collect();
        let integral = lookup(base, &path).is_some_and(|x| x.is_integer());
        let value = if integral && v.fract() == 0.0 && v.abs() < 9.0e15 {
            toml::Value::Integer(*v as i64)
        } else {
            toml::Value::Float(*v)
        };
        config::set_path(&mut table, &path, value)?;
    }
    if cfg.sweep.independent_seeds {
        let seed = rng::sub_seed(cfg.ensemble.seed, index as u64);
        config::set_path(&mut table, &["ensemble".into(), "seed".into()], toml::Value::Integer(seed as i64))?;
    }
    config::from_table(table, &format!("sweep point {index}"))
}

fn lookup<'a>(t: &'a toml::Table, path: &[String]) -> Option<&'a toml::Value> {
    let (last, parents) = path.split_last()?;
    let mut cur = t;
    for p in parents {
        cur = cur.get(p)?.as_table()?;
    }
    cur.get(last)
}

fn grid_points(params: &[config::SweepParam]) -> Vec<Vec<(String, f64)>> {
    let mut points = vec![Vec::new()];
    for p in params {
        points = points
            .into_iter()
            .flat_map(|prefix| {
                p.values.iter().map(move |&v| {
                    let mut row = prefix.clone();
                    row.push((p.key.clone(), v));
                    row
                })
            })
            .collect();
    }
    points
}

fn sweep(cfg: &RunConfig, points_dir: Option<&Path>) -> Result<Outcome, CliError> {
    let sw = &cfg.sweep;
    if !(1..=2).contains(&sw.parameters.len()) {
        return Err(CliError::Config("sweep: give one or two parameters".into()));
    }
    if sw.parameters.iter().any(|p| p.values.is_empty() || p.values.iter().any(|v| !v.is_finite())) {
        return Err(CliError::Config("sweep: every parameter needs a non-empty grid of finite values".into()));
    }
    if sw.target == Scenario::Sweep {
        return Err(CliError::Config("sweep: target cannot be another sweep".into()));
    }
    let base = config::to_table(cfg);
    let points = grid_points(&sw.parameters);
    let records: Vec<PointRecord> = points
        .par_iter()
        .enumerate()
        .map(|(index, assignments)| {
            let pc = point_config(cfg, &base, index, assignments)?;
            let hash = config::config_hash(&pc);
            let file = points_dir.map(|d| d.join(format!("point-{index:05}.json")));
            if let Some(f) = &file {
                if let Ok(text) = std::fs::read_to_string(f) {
                    if let Ok(rec) = serde_json::from_str::<PointRecord>(&text) {
                        if rec.config_hash == hash {
                            return Ok(rec);
                        }
                    }
                }
            }
            let out = run(&pc, None)?;
            let rec = PointRecord { index, assignments: assignments.clone(), config_hash: hash, summary: out.summary };
            if let Some(f) = &file {
                crate::output::write_atomic(f, serde_json::to_string(&rec).expect("point serialises").as_bytes())?;
            }
            Ok(rec)
        })
        .collect::<Result<_, CliError>>()?;

    let scalar = |v: &Value| -> Option<f64> {
        match v {
            Value::Number(n) => n.as_f64(),
            Value::Bool(b) => Some(f64::from(u8::from(*b))),
            _ => None,
        }
    };
    let columns: Vec<String> = records[0]
        .summary
        .as_object()
        .map(|m| m.iter().filter(|(_, v)| scalar(v).is_some()).map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut header: Vec<(&str, &str)> = sw.parameters.iter().map(|p| (p.key.as_str(), "1")).collect();
    header.extend(columns.iter().map(|c| (c.as_str(), "1")));
    let mut csv = Csv::new("sweep.csv", &header);
    for r in &records {
        let mut cells: Vec<String> = r.assignments.iter().map(|(_, v)| v.to_string()).collect();
        for c in &columns {
            cells.push(r.summary.get(c).and_then(scalar).map_or(String::new(), |v| v.to_string()));
        }
        csv.raw_row(&cells);
    }
    let mut artifacts = vec![csv.finish()];
    if let (Some(col), [p]) = (&sw.plot, sw.parameters.as_slice()) {
        let pts: Vec<(f64, f64)> =
            records.iter().filter_map(|r| Some((r.assignments[0].1, r.summary.get(col).and_then(scalar)?))).collect();
        artifacts.push(svg_artifact("sweep.svg", &format!("{col} against {}", p.key), &p.key, col, vec![Series::new(col, pts)]));
    }
    let failures: Vec<String> = records
        .iter()
        .flat_map(|r| {
            r.summary.get("checks").and_then(Value::as_array).into_iter().flatten().filter(|c| c["pass"] == false).map(move |c| format!("point {}: {c}", r.index))
        })
        .collect();
    let mut s = Map::new();
    s.insert("target".into(), json!(sw.target));
    s.insert("n_points".into(), json!(records.len()));
    s.insert("points".into(), Value::Array(records.iter().map(|r| json!({"assignments": r.assignments, "summary": r.summary})).collect()));
    Ok(Outcome { summary: Value::Object(s), artifacts, failures })
}

fn density_points(h: &Histogram) -> Vec<(f64, f64)> {
    let w = h.width();
    h.edges().windows(2).zip(h.frequencies()).map(|(e, f)| ((e[0] + e[1]) / 2.0, f / w)).collect()
}

fn fig1(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let t = &cfg.trajectories;
    let (seed, n) = (cfg.ensemble.seed, cfg.ensemble.n_trajectories);
    let s0 = state0(cfg)?;
    let mut s = Map::new();
    let mut artifacts = Vec::new();

    let det = abstract_detector(cfg)?;
    let recs = traj::run_ensemble(&s0, &det, &cfg.model, seed, n)?;
    let waits: Vec<f64> = recs.iter().filter_map(|r| r.jump_times.first().copied()).collect();
    if !waits.is_empty() {
        let t_max = waits.iter().copied().fold(0.0, f64::max) * (1.0 + 1e-12);
        let mut h = Histogram::new(0.0, t_max, t.bins)?;
        h.extend(waits.iter().copied());
        let emp = density_points(&h);
        let mut csv = Csv::new("waiting.csv", &[("t", TIME), ("density", "1/time"), ("exponential", "1/time")]);
        let mut model = Vec::new();
        for &(x, y) in &emp {
            let e = (-x / t.tau_m).exp() / t.tau_m;
            csv.row(&[x, y, e]);
            model.push((x, e));
        }
        artifacts.push(csv.finish());
        artifacts.push(svg_artifact("waiting.svg", "Waiting time to measurement", "t", "density", vec![Series::new("empirical", emp), Series::new("exp(-t/tau_m)/tau_m", model)]));
        if let Ok(ks) = stats::ks_exponential(&waits, t.tau_m) {
            s.insert("ks_p_value".into(), json!(ks.p_value));
        }
    }

    // phase at which the outcome was decided, and over every photon
    let hist = |recs: &[TrajectoryRecord]| -> Result<(Histogram, f64, f64), CliError> {
        let decided: Vec<f64> = recs.iter().filter_map(|r| r.decision_phase).collect();
        let r = stats::circular(&decided).map_or(f64::NAN, |c| c.resultant);
        let mut h = Histogram::phase(t.bins)?;
        h.extend(decided);
        let all = traj::phase_selectivity(recs, t.bins)?.concentration.resultant;
        Ok((h, r, all))
    };
    let cont = traj::run_ensemble(&s0, &continuous_detector(cfg)?, &cfg.model, seed, n)?;
    let (hc, rc, rc_all) = hist(&cont)?;
    let d = design(cfg)?;
    let pdet = pulsed_detector(cfg, &d, t.first_only)?;
    let pulsed = traj::run_ensemble(&s0, &pdet, &cfg.model, seed, n)?;
    let (hp, rp, rp_all) = hist(&pulsed)?;
    s.insert("continuous_r".into(), json!(rc));
    s.insert("pulsed_r".into(), json!(rp));
    s.insert("continuous_r_all_photons".into(), json!(rc_all));
    s.insert("pulsed_r_all_photons".into(), json!(rp_all));
    let span = pdet.span().expect("pulsed detector is periodic");
    let (w0, w1) = d.default_window();
    let scale = span / d.period();
    if let Some(f) = traj::window_fraction(&pulsed, span, (w0 * scale, w1 * scale)) {
        s.insert("pulsed_window_fraction".into(), json!(f));
    }
    let (pc, pp) = (density_points(&hc), density_points(&hp));
    let mut csv = Csv::new("phases.csv", &[("phi", "rad"), ("continuous", "1/rad"), ("pulsed", "1/rad"), ("uniform", "1/rad")]);
    for (a, b) in pc.iter().zip(&pp) {
        csv.row(&[a.0, a.1, b.1, 1.0 / TAU]);
    }
    artifacts.push(csv.finish());
    artifacts.push(svg_artifact(
        "phases.svg",
        "Two-state phase at measurement",
        "phase (rad)",
        "density",
        vec![Series::new("continuous", pc), Series::new("pulsed", pp)],
    ));
    Ok(Checks::default().finish(s, artifacts))
}
