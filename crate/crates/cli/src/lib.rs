//! Command-line harness around the `dgnnflow` crate: dataset generation,
//! reference and simulated inference to CSV, CSV comparison, latency
//! statistics, and replay of any run from its manifest.
//!
//! Every command that writes a file also writes `<output>.manifest.json`
//! holding the resolved parameters and SHA-256 checksums of its inputs and
//! outputs; `replay` re-runs it and checks the checksums.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 comparison failure.

pub mod args;
pub mod commands;
pub mod manifest;

use std::path::Path;

use thiserror::Error;

pub use args::{Cli, Command, Engine};
pub use commands::{Outcome, Run};
pub use manifest::{manifest_path, FileDigest, RunManifest};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error, PartialEq)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Comparison(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Comparison(_) => 3,
        }
    }
}

/// Executes a run and, if it wrote any file, records its manifest next to
/// the first output.
pub fn execute_recorded(run: &Run) -> Result<Outcome, CliError> {
    let outcome = run.execute()?;
    if let Some(&(_, primary)) = run.outputs().first() {
        RunManifest::record(run)?.save(&manifest_path(primary))?;
    }
    Ok(outcome)
}

/// Re-runs a recorded command, optionally into `out_dir`, and compares
/// output checksums with the recorded ones.
pub fn replay(manifest: &Path, out_dir: Option<&Path>) -> Result<String, CliError> {
    let m = RunManifest::load(manifest)?;
    for d in &m.inputs {
        let now = manifest::sha256_file(&d.path)?;
        if now != d.sha256 {
            return Err(CliError::Data(format!(
                "input {} ({}) changed since the run was recorded",
                d.role,
                d.path.display()
            )));
        }
    }
    let run = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
            m.run.with_outputs_in(dir)
        }
        None => m.run.clone(),
    };
    run.execute()?;
    let now = manifest::digest_all(&run.outputs())?;
    let mut report = String::new();
    let mut differing = 0;
    for (then, now) in m.outputs.iter().zip(&now) {
        let same = then.sha256 == now.sha256;
        differing += usize::from(!same);
        report.push_str(&format!("{} {} {}\n", if same { "same" } else { "DIFFERS" }, now.role, now.path.display()));
    }
    let report = report.trim_end().to_string();
    if differing > 0 || m.outputs.len() != now.len() {
        return Err(CliError::Comparison(format!("replay produced {differing} differing outputs\n{report}")));
    }
    Ok(report)
}

/// Runs a parsed command line.
pub fn run_command(cmd: &Command) -> Result<String, CliError> {
    if let Command::Replay(a) = cmd {
        return replay(&a.manifest, a.out_dir.as_deref());
    }
    let run = Run::from_command(cmd)?;
    let outcome = execute_recorded(&run)?;
    if outcome.mismatch {
        return Err(CliError::Comparison(outcome.message));
    }
    Ok(outcome.message)
}

/// Parses `argv` (including the program name) and runs it. Returns the
/// text for stdout, or the error carrying the exit code.
pub fn run_args<I, T>(argv: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser;
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    run_command(&cli.command)
}
