//! Experiment harness: configuration, subcommands, seeding and report files.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use monotone_spde::Executor;
use serde::Serialize;

pub use config::RunConfig;
pub use output::Check;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_BOUND: i32 = 4;

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "MONOTONE_SPDE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<monotone_spde::Error> for CliError {
    fn from(e: monotone_spde::Error) -> Self {
        use monotone_spde::Error as E;
        match e {
            E::NonFinite(_)
            | E::NonFiniteState { .. }
            | E::NewtonDiverged(_)
            | E::ResolventDiverged { .. }
            | E::ConjugateRange(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Validate,
    Simulate,
    Invariant,
    Mixing,
    Tangent,
    Kolmogorov,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::Invariant => "invariant",
            Command::Mixing => "mixing",
            Command::Tangent => "tangent",
            Command::Kolmogorov => "kolmogorov",
        }
    }
}

/// Flags that override the configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

/// What a subcommand produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    /// Informative comparisons that do not decide the exit code.
    pub diagnostics: Vec<Check>,
    pub files: Vec<String>,
    pub details: serde_json::Value,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    command: &'static str,
    status: &'static str,
    exit_code: i32,
    git_describe: String,
    master_seed: u64,
    threads: usize,
    wall_time_s: f64,
    checks: &'a [Check],
    diagnostics: &'a [Check],
    files: &'a [String],
    details: &'a serde_json::Value,
    config: &'a RunConfig,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Apply overrides, validate, run and write the summary.
pub fn execute(cmd: Command, mut cfg: RunConfig, ov: &Overrides) -> Result<Outcome, CliError> {
    if let Some(s) = ov.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = ov.threads {
        cfg.threads = t;
    }
    if let Some(o) = &ov.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let exec = Executor::with_threads(cfg.threads);
    let start = Instant::now();
    let outcome = match cmd {
        Command::Validate => commands::validate(&cfg, &exec),
        Command::Simulate => commands::simulate(&cfg, &exec),
        Command::Invariant => commands::invariant(&cfg, &exec),
        Command::Mixing => commands::mixing(&cfg, &exec),
        Command::Tangent => commands::tangent(&cfg, &exec),
        Command::Kolmogorov => commands::kolmogorov(&cfg, &exec),
    }?;
    let exit_code = if outcome.passed() { EXIT_OK } else { EXIT_BOUND };
    let summary = RunSummary {
        command: cmd.name(),
        status: if exit_code == EXIT_OK { "pass" } else { "fail" },
        exit_code,
        git_describe: git_describe(),
        master_seed: cfg.master_seed,
        threads: cfg.threads,
        wall_time_s: start.elapsed().as_secs_f64(),
        checks: &outcome.checks,
        diagnostics: &outcome.diagnostics,
        files: &outcome.files,
        details: &outcome.details,
        config: &cfg,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    output::write_text(&cfg.out_dir.join("run_summary.json"), &(json + "\n"))?;
    Ok(outcome)
}

/// Exit code for a finished run.
pub fn exit_code(result: &Result<Outcome, CliError>) -> i32 {
    match result {
        Ok(o) if o.passed() => EXIT_OK,
        Ok(_) => EXIT_BOUND,
        Err(e) => e.exit_code(),
    }
}

/// Thread count from the environment, if set and valid.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok()
}
