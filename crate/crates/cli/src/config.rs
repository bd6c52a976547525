//! Run configuration: strict TOML, dotted-key overrides, canonical hashing.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use phasemeas::bloch::DriveWaveform;
use phasemeas::hvmodels::MeasurementModel;
use phasemeas::trajectories::{Mode, PhaseReference};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PHASEMEAS_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "phasemeas-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Integrate,
    FindJump,
    Trajectories,
    Selection,
    HvTest,
    Sweep,
    Fig3,
    Fig1,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Integrate => "integrate",
            Scenario::FindJump => "find-jump",
            Scenario::Trajectories => "trajectories",
            Scenario::Selection => "selection",
            Scenario::HvTest => "hv-test",
            Scenario::Sweep => "sweep",
            Scenario::Fig3 => "fig3",
            Scenario::Fig1 => "fig1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub waveform: WaveformConfig,
    #[serde(default)]
    pub integrate: IntegrateConfig,
    #[serde(default)]
    pub pulse: PulseConfig,
    #[serde(default)]
    pub model: MeasurementModel,
    #[serde(default)]
    pub state: StateConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub trajectories: TrajectoryConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub hv: HvConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Drive parameters; frequencies are angular, rates in units of Γ2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformConfig {
    pub omega_off: f64,
    pub omega_mod: f64,
    pub omega_r: f64,
    pub gamma2: f64,
    /// Defaults to `omega_mod`.
    pub omega_10: Option<f64>,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self { omega_off: 100.0, omega_mod: 10.0, omega_r: 2.0, gamma2: 1.0, omega_10: None }
    }
}

impl WaveformConfig {
    pub fn waveform(&self) -> DriveWaveform<f64> {
        let mut w = DriveWaveform::new(self.omega_off, self.omega_mod, self.omega_r, self.gamma2);
        w.omega_10 = self.omega_10.unwrap_or(self.omega_mod);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrateConfig {
    pub n_cycles: usize,
    pub per_cycle: usize,
    pub tol: f64,
    /// Master equation instead of amplitudes.
    pub density: bool,
    /// Apply the optimised jump in every cycle.
    pub designed_jumps: bool,
}

impl Default for IntegrateConfig {
    fn default() -> Self {
        Self { n_cycles: 3, per_cycle: 200, tol: 1e-9, density: false, designed_jumps: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseConfig {
    pub search_tol: f64,
    pub grid: usize,
    pub tol: f64,
    pub landscape_points: usize,
    /// Evaluate this jump phase instead of searching.
    pub jump_phase: Option<f64>,
    pub cumulative_max: u64,
    /// Cycles integrated for the light-shift table.
    pub stark_cycles: usize,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self { search_tol: 1e-6, grid: 64, tol: 1e-10, landscape_points: 256, jump_phase: None, cumulative_max: 10_000, stark_cycles: 20 }
    }
}

/// Initial two-state amplitudes `α|0⟩ + sqrt(1−α²) e^{iφ}|1⟩`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateConfig {
    pub alpha: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub n_trajectories: u64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { n_trajectories: 1000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub mode: Mode,
    pub bins: usize,
    pub reference: PhaseReference,
    pub first_only: bool,
    pub tol: f64,
    /// Pulsed: observation length in modulation cycles.
    pub horizon_cycles: u64,
    pub stark_corrected: bool,
    /// Continuous: resonant Rabi frequency; ω10 is chosen so that τ_m = τ_φ.
    pub continuous_omega_r: f64,
    /// Continuous: observation length in two-state periods.
    pub horizon_periods: f64,
    /// Abstract: mean measurement time and two-state angular frequency.
    pub tau_m: f64,
    pub abstract_omega_10: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pulsed,
            bins: 32,
            reference: PhaseReference::C1Branch,
            first_only: false,
            tol: 1e-10,
            horizon_cycles: 10_000,
            stark_corrected: false,
            continuous_omega_r: 1.0,
            horizon_periods: 10.0,
            tau_m: 1.0,
            abstract_omega_10: TAU,
        }
    }
}

/// Selection-rule scheme in SI units (seconds, Hz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub q_dark: f64,
    pub gamma2: f64,
    pub nu10: f64,
    pub tau_m: f64,
    pub bins: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { q_dark: 0.5, gamma2: 3.7e7, nu10: 1e4, tau_m: 1e-8, bins: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HvSource {
    /// Uniform phases, outcomes from the model.
    #[default]
    Synthetic,
    /// Phases from pulsed trajectories with spread preparation phases.
    Pulsed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HvConfig {
    pub source: HvSource,
    pub n: u64,
    pub alpha2: f64,
    /// Require p > 0.01 (null run).
    pub calibration: bool,
    pub bins: usize,
}

impl Default for HvConfig {
    fn default() -> Self {
        Self { source: HvSource::Synthetic, n: 10_000, alpha2: 0.5, calibration: false, bins: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParam {
    /// Dotted config key, e.g. `waveform.omega_r`.
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub target: Scenario,
    pub parameters: Vec<SweepParam>,
    /// Give every point its own seed instead of sharing the ensemble seed.
    pub independent_seeds: bool,
    /// Summary column to plot against a single swept parameter.
    pub plot: Option<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { target: Scenario::FindJump, parameters: Vec::new(), independent_seeds: false, plot: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub value: f64,
    pub tol: f64,
}

/// Optional acceptance checks; a failing check exits with code 4.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub jump_phase: Option<Target>,
    /// Relative tolerance in `tol`.
    pub p_scatter: Option<Target>,
    pub stark_per_cycle: Option<Target>,
    pub max_concentration: Option<f64>,
    pub min_window_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: None, formats: vec![Format::Csv, Format::Jsonl, Format::Svg] }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let upto = &text[..offset.min(text.len())];
    let line = upto.matches('\n').count() + 1;
    let col = upto.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn toml_error(source: &str, text: &str, err: &toml::de::Error) -> CliError {
    let (line, col) = err.span().map_or((1, 1), |s| line_col(text, s.start));
    CliError::Config(format!("{source}:{line}:{col}: {}", err.message()))
}

/// Parses `key=value`; the value is read as a TOML value, or as a string if
/// that fails.
fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

pub fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{}` is not a table", path.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Loads a config file (or defaults), applies overrides and an optional
/// scenario, and validates strictly.
pub fn load(path: Option<&Path>, scenario: Option<Scenario>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let (source, text) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            (p.display().to_string(), text)
        }
        None => ("<defaults>".to_string(), String::new()),
    };
    if scenario.is_none() && overrides.is_empty() {
        return toml::from_str::<RunConfig>(&text).map_err(|e| toml_error(&source, &text, &e));
    }
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| toml_error(&source, &text, &e))?;
    if let Some(s) = scenario {
        table.insert("scenario".into(), toml::Value::String(s.name().into()));
    }
    for o in overrides {
        let (path, value) = parse_override(o)?;
        set_path(&mut table, &path, value)?;
    }
    from_table(table, &format!("{source} (with overrides)"))
}

pub fn from_table(table: toml::Table, source: &str) -> Result<RunConfig, CliError> {
    let text = toml::to_string(&table).map_err(|e| CliError::Config(format!("{source}: {e}")))?;
    toml::from_str::<RunConfig>(&text).map_err(|e| toml_error(source, &text, &e))
}

pub fn to_table(cfg: &RunConfig) -> toml::Table {
    toml::Table::try_from(cfg).expect("config serialises to a table")
}

/// Canonical TOML of the fully resolved config.
pub fn resolved_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serialises")
}

pub fn config_hash(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(resolved_toml(cfg).as_bytes()))
}

/// Output directory: flag, then config, then environment, then default.
pub fn output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output.directory {
        return p.clone();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_reports_position() {
        let e = toml::from_str::<RunConfig>("").unwrap_err();
        let CliError::Config(msg) = toml_error("x.toml", "", &e) else { panic!() };
        assert!(msg.starts_with("x.toml:1:1:"), "{msg}");
        assert!(msg.contains("scenario"));
    }

    #[test]
    fn unknown_key_is_located() {
        let text = "scenario = \"fig3\"\n[waveform]\nomega_of = 3\n";
        let e = toml::from_str::<RunConfig>(text).unwrap_err();
        let CliError::Config(msg) = toml_error("c.toml", text, &e) else { panic!() };
        assert!(msg.starts_with("c.toml:3:"), "{msg}");
    }

    #[test]
    fn overrides_are_typed() {
        let (p, v) = parse_override("waveform.omega_r=4").unwrap();
        assert_eq!(p, vec!["waveform", "omega_r"]);
        assert_eq!(v, toml::Value::Integer(4));
        let (_, v) = parse_override("trajectories.mode=continuous").unwrap();
        assert_eq!(v, toml::Value::String("continuous".into()));
        assert!(parse_override("nokey").is_err());
    }

    #[test]
    fn integer_literals_coerce_to_floats() {
        let cfg = load(None, Some(Scenario::FindJump), &["waveform.omega_r=4".into()]).unwrap();
        assert_eq!(cfg.waveform.omega_r, 4.0);
    }

    #[test]
    fn hash_is_stable() {
        let a = load(None, Some(Scenario::Fig3), &[]).unwrap();
        let b = load(None, Some(Scenario::Fig3), &[]).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = load(None, Some(Scenario::Fig1), &[]).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn resolved_round_trips() {
        let a = load(None, Some(Scenario::Sweep), &["sweep.parameters=[{key=\"waveform.omega_r\", values=[1,2]}]".into()]).unwrap();
        let back: RunConfig = toml::from_str(&resolved_toml(&a)).unwrap();
        assert_eq!(a, back);
    }
}
