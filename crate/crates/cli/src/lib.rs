//! Command-line front end for the `dlsurface` toolkit.
//!
//! Every command writes one canonical JSON document (sorted keys, no
//! timestamps) that embeds the fully resolved run configuration.

pub mod args;
mod commands;
mod report;

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use dlsurface::ToleranceConfig;

pub use args::{Cli, Command, CommonArgs, ConstructKind};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INPUT: u8 = 1;
    pub const ASSUMPTION: u8 = 2;
    /// Internal failure or a theorem-violation diagnostic.
    pub const INTERNAL: u8 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("assumption violation: {0}")]
    Assumption(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => exit::INPUT,
            CliError::Assumption(_) => exit::ASSUMPTION,
            CliError::Internal(_) => exit::INTERNAL,
        }
    }
}

impl From<dlsurface::Error> for CliError {
    fn from(e: dlsurface::Error) -> Self {
        use dlsurface::Error as E;
        match e {
            E::Assumption(_) | E::SingularGram => CliError::Assumption(e.to_string()),
            E::Shape { .. }
            | E::Budget { .. }
            | E::LayerIndex { .. }
            | E::NoNullSpace { .. }
            | E::IndexSetTooLarge { .. }
            | E::InvalidIndex { .. }
            | E::RankExceedsWidth { .. }
            | E::InvalidParameter(_)
            | E::Parse { .. }
            | E::Io { .. } => CliError::Input(e.to_string()),
        }
    }
}

/// Fully resolved configuration, embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub x_path: Option<PathBuf>,
    pub y_path: Option<PathBuf>,
    pub shape: Option<Vec<usize>>,
    pub weights_dir: Option<PathBuf>,
    pub seed: u64,
    pub strict: bool,
    pub tolerances: ToleranceConfig,
    pub output_path: Option<PathBuf>,
    /// Command-specific parameters with defaults filled in.
    pub parameters: Value,
}

/// A finished run: the report and the exit code it implies.
#[derive(Debug)]
pub struct Outcome {
    pub report: Value,
    pub exit_code: u8,
}

pub fn tolerances(common: &CommonArgs) -> Result<ToleranceConfig, CliError> {
    let d = ToleranceConfig::default();
    let cfg = ToleranceConfig {
        rank_rel_tol: common.rank_tol.unwrap_or(d.rank_rel_tol),
        eig_zero_tol: common.eig_tol.unwrap_or(d.eig_zero_tol),
        grad_crit_tol: common.grad_tol.unwrap_or(d.grad_crit_tol),
        fd_step: common.fd_step.unwrap_or(d.fd_step),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a parsed command line and returns the report without writing it.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    commands::run(cli)
}

/// Serializes a report with sorted keys and a trailing newline.
pub fn render(report: &Value) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports are plain JSON values");
    s.push('\n');
    s
}

pub fn write_report(report: &Value, out: Option<&Path>) -> Result<(), CliError> {
    let text = render(report);
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Input(format!("cannot write report {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Entry point used by the binary: parses `args`, runs, writes the report
/// and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::INPUT } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(outcome) => match write_report(&outcome.report, cli.common.out.as_deref()) {
            Ok(()) => outcome.exit_code,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
