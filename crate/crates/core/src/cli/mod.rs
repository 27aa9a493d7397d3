//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
//! failure, 3 I/O error.

pub mod config;
pub mod output;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::symmetry_residual;
pub use config::{Format, Overrides, PhiSelection, RunConfig};
pub use run::{run_g2, run_oracle, run_simulate, run_sweep, G2Report};

#[derive(Debug, Parser)]
#[command(name = "qmeta", version, about = "Quantum-jump simulator for a phase-tunable qubit lattice")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run trajectories at one phase and report detector counts.
    Simulate {
        #[command(flatten)]
        common: Overrides,
        /// Also write every click as `trajectory,time,channel`.
        #[arg(long, value_name = "PATH")]
        events: Option<PathBuf>,
    },
    /// Detector counts over a phase grid.
    Sweep {
        #[command(flatten)]
        common: Overrides,
    },
    /// Expected counts from the master equation.
    Oracle {
        #[command(flatten)]
        common: Overrides,
        /// Also write the <sz_i>(t) snapshots.
        #[arg(long, value_name = "PATH")]
        series: Option<PathBuf>,
    },
    /// Cross-correlation g2 of two output detectors at one phase.
    G2 {
        #[command(flatten)]
        common: Overrides,
        detector_a: usize,
        detector_b: usize,
    },
    /// Residual of the phi -> -phi mirror symmetry over a sweep.
    CheckSymmetry {
        #[command(flatten)]
        common: Overrides,
        /// Read an existing sweep CSV instead of running one.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn unsupported(format: Format, what: &str) -> Error {
    Error::InvalidConfig(format!("{format:?} output is not available for {what}").to_lowercase())
}

#[derive(Serialize)]
struct OracleJson {
    phi: f64,
    dt: f64,
    expected: crate::oracle::ExpectedCounts,
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { common, events } => {
            let cfg = RunConfig::resolve(common)?;
            let (sweep, records) = run_simulate(&cfg)?;
            emit_sweep(&cfg, &sweep)?;
            if let Some(path) = events {
                output::write_text(Some(path), &output::event_log_csv(&records))?;
            }
        }
        Command::Sweep { common } => {
            let cfg = RunConfig::resolve(common)?;
            emit_sweep(&cfg, &run_sweep(&cfg)?)?;
        }
        Command::Oracle { common, series } => {
            let cfg = RunConfig::resolve(common)?;
            let runs = run_oracle(&cfg)?;
            let text = match cfg.format {
                Format::Csv => output::oracle_csv(&runs, cfg.oracle_dt()),
                Format::Json => output::to_json(
                    &runs
                        .iter()
                        .map(|(phi, s)| OracleJson { phi: *phi, dt: cfg.oracle_dt(), expected: s.expected.clone() })
                        .collect::<Vec<_>>(),
                ),
                Format::Svg => return Err(unsupported(cfg.format, "oracle runs")),
            };
            output::write_text(cfg.output.as_deref(), &text)?;
            if let Some(path) = series {
                output::write_text(Some(path), &output::sz_series_csv(&runs))?;
            }
        }
        Command::G2 { common, detector_a, detector_b } => {
            let cfg = RunConfig::resolve(common)?;
            let report = run_g2(&cfg, *detector_a, *detector_b)?;
            let text = match cfg.format {
                Format::Csv => output::g2_csv(&report, cfg.trajectories),
                Format::Json => output::to_json(&report),
                Format::Svg => return Err(unsupported(cfg.format, "g2")),
            };
            output::write_text(cfg.output.as_deref(), &text)?;
        }
        Command::CheckSymmetry { common, input } => {
            let cfg = RunConfig::resolve(common)?;
            let sweep = match input {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    output::parse_sweep_csv(&text)?
                }
                None => run_sweep(&cfg)?,
            };
            let rows = symmetry_residual(&sweep)?;
            let text = match cfg.format {
                Format::Csv => output::symmetry_csv(&rows),
                Format::Json => output::to_json(&rows),
                Format::Svg => return Err(unsupported(cfg.format, "symmetry checks")),
            };
            output::write_text(cfg.output.as_deref(), &text)?;
            let within = rows.iter().filter(|r| r.within_noise()).count();
            eprintln!("{within}/{} grid points within the 3-sigma noise scale", rows.len());
        }
    }
    Ok(())
}

fn emit_sweep(cfg: &RunConfig, sweep: &crate::stats::SweepResult) -> Result<()> {
    let text = match cfg.format {
        Format::Csv => output::sweep_csv(sweep),
        Format::Json => output::sweep_json(sweep, &output::Metadata::from_config(cfg)),
        Format::Svg => output::sweep_svg(sweep),
    };
    output::write_text(cfg.output.as_deref(), &text)
}
