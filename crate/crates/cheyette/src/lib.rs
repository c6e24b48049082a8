//! Command-line driver for `cheyette-core`: JSON run configs, CSV/JSON file formats and
//! multi-threaded Monte Carlo.
//!
//! ```text
//! cheyette <command> [--config run.json] [--key.path value | --key.path=value]...
//! ```
//!
//! Commands: `localvol`, `roundtrip`, `mueff`, `calibrate-swaption`, `ig-check`. Exit codes are
//! 0 on success, 2 for input errors, 3 for domain or arbitrage errors, 4 for simulation failures
//! and 5 for calibration failures.

pub mod commands;
pub mod config;
pub mod error;
pub mod igcheck;
pub mod io;
pub mod parallel;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "cheyette", version, about = "Explicit local volatility for Cheyette rate models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate local vol `t,x,sigma_loc` with arbitrage diagnostics.
    Localvol(Flags),
    /// Recover the input smile by simulation with first- and third-order local vol.
    Roundtrip(Flags),
    /// Effective mean reversion of the two-factor model over a maturity grid.
    Mueff(Flags),
    /// Calibrate the short-rate variance slice to a swaption smile.
    CalibrateSwaption(Flags),
    /// Inverse-Gaussian moment checks and the expansion-order table.
    IgCheck(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// `--config FILE` and config overrides `--key.path VALUE` (or `--key.path=VALUE`)
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "FLAGS")]
    flags: Vec<String>,
}

impl Command {
    fn flags(&self) -> &[String] {
        match self {
            Command::Localvol(f) | Command::Roundtrip(f) | Command::Mueff(f) | Command::CalibrateSwaption(f) | Command::IgCheck(f) => &f.flags,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns its output lines.
pub fn execute<I, T>(args: I) -> Result<Vec<String>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut config_file: Option<PathBuf> = None;
    let mut overrides = Vec::new();
    for (key, value) in config::parse_overrides(cli.command.flags())? {
        if key == "config" {
            config_file = Some(PathBuf::from(value));
        } else {
            overrides.push((key, value));
        }
    }
    let cfg = RunConfig::load(config_file.as_deref(), &overrides)?;
    let out = cfg.resolve_out_dir();
    std::fs::create_dir_all(&out).map_err(error::CliError::io(&out))?;
    match cli.command {
        Command::Localvol(_) => commands::localvol(&cfg, &out),
        Command::Roundtrip(_) => commands::roundtrip(&cfg, &out),
        Command::Mueff(_) => commands::mueff(&cfg, &out),
        Command::CalibrateSwaption(_) => commands::calibrate_swaption(&cfg, &out),
        Command::IgCheck(_) => commands::ig_check(&out),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    // help and version go through clap so they print normally and exit 0
    if let Err(e) = Cli::try_parse_from(&args) {
        if !e.use_stderr() {
            let _ = e.print();
            return 0;
        }
    }
    match execute(args) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
