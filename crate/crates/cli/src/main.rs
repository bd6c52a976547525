//! `phasemeas` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod error;
mod output;
mod scenarios;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use crate::config::{RunConfig, Scenario};
use crate::error::CliError;
use crate::output::Manifest;

#[derive(Parser)]
#[command(name = "phasemeas", version, about = "Phase-specific quantum measurement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set waveform.omega_r=4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (default: $PHASEMEAS_OUT_DIR, then ./phasemeas-out).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Reuse finished sweep points in the output directory.
    #[arg(long, global = true)]
    resume: bool,
    #[arg(long, short, action = ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario named in the config file.
    Run,
    /// Integrate the Bloch equations for a drive.
    Integrate,
    /// Optimise the per-cycle phase jump.
    FindJump,
    /// Quantum-jump trajectory ensemble.
    Trajectories,
    /// Selection-rule discrimination scheme.
    Selection,
    /// Test phase-tagged outcomes for phase dependence.
    HvTest,
    /// Cross-product parameter sweep.
    Sweep,
    /// Pulse design figures: excitation, landscape, cumulative probability, light shift.
    Fig3,
    /// Waiting-time law and continuous versus pulsed phase histograms.
    Fig1,
    /// Re-run a manifest and compare artifact hashes.
    Rerun {
        /// Manifest file or the directory holding it.
        manifest: PathBuf,
    },
}

impl Command {
    fn scenario(&self) -> Option<Scenario> {
        Some(match self {
            Command::Integrate => Scenario::Integrate,
            Command::FindJump => Scenario::FindJump,
            Command::Trajectories => Scenario::Trajectories,
            Command::Selection => Scenario::Selection,
            Command::HvTest => Scenario::HvTest,
            Command::Sweep => Scenario::Sweep,
            Command::Fig3 => Scenario::Fig3,
            Command::Fig1 => Scenario::Fig1,
            Command::Run | Command::Rerun { .. } => return None,
        })
    }
}

fn execute(cfg: &RunConfig, dir: &Path, force: bool, resume: bool) -> Result<Manifest, CliError> {
    output::prepare_dir(dir, force, resume)?;
    let points = dir.join("points");
    if cfg.scenario == Scenario::Sweep && !resume && points.exists() {
        std::fs::remove_dir_all(&points).map_err(CliError::io(format!("clear {}", points.display())))?;
    }
    let points_dir = (cfg.scenario == Scenario::Sweep).then_some(points.as_path());
    log::info!("running {} into {}", cfg.scenario.name(), dir.display());
    let outcome = scenarios::run(cfg, points_dir)?;
    let manifest = output::emit(dir, cfg, &outcome.artifacts)?;
    println!("{}: {} artifacts in {}", cfg.scenario.name(), manifest.artifacts.len(), dir.display());
    if !outcome.failures.is_empty() {
        return Err(CliError::Acceptance(outcome.failures.join("; ")));
    }
    Ok(manifest)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Rerun { manifest } => {
            let path = output::manifest_path(manifest);
            let expected = Manifest::read(&path)?;
            let cfg = expected.config()?;
            let dir = config::output_dir(cli.out.as_deref(), &cfg);
            if path.parent().is_some_and(|p| p == dir) {
                return Err(CliError::Config("rerun needs a fresh output directory (--out)".into()));
            }
            let actual = execute(&cfg, &dir, cli.force, false)?;
            let diff = output::diff(&expected, &actual);
            if !diff.is_empty() {
                return Err(CliError::Acceptance(format!("rerun is not bitwise identical: {}", diff.join(", "))));
            }
            println!("rerun identical: {} artifacts", actual.artifacts.len());
            Ok(())
        }
        cmd => {
            if matches!(cmd, Command::Run) && cli.config.is_none() {
                return Err(CliError::Config("`run` needs --config".into()));
            }
            let cfg = config::load(cli.config.as_deref(), cmd.scenario(), &cli.set)?;
            let dir = config::output_dir(cli.out.as_deref(), &cfg);
            execute(&cfg, &dir, cli.force, cli.resume).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
