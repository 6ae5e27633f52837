use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use monotone_spde_cli::{execute, exit_code, threads_from_env, Command, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "monotone-spde", version, about = "Experiments for SPDEs with monotone drift")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; falls back to MONOTONE_SPDE_THREADS, then `run.threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Check the structural assumptions on A, β and B.
    Validate,
    /// Sample paths, the Itô identity and the energy estimate.
    Simulate,
    /// Long-run averages against the moment bounds.
    Invariant,
    /// Coupled pairs against the decay envelope.
    Mixing,
    /// First and second variation checks.
    Tangent,
    /// Kolmogorov resolvent residuals and the drift-replacement gap.
    Kolmogorov,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Validate => Command::Validate,
        Cmd::Simulate => Command::Simulate,
        Cmd::Invariant => Command::Invariant,
        Cmd::Mixing => Command::Mixing,
        Cmd::Tangent => Command::Tangent,
        Cmd::Kolmogorov => Command::Kolmogorov,
    };
    let cfg = match &args.config {
        Some(path) => RunConfig::from_file(path),
        None => Ok(RunConfig::default()),
    };
    let result = cfg.and_then(|cfg| {
        let ov = Overrides {
            seed: args.seed,
            threads: args.threads.or_else(threads_from_env),
            out: args.out.clone(),
        };
        execute(command, cfg, &ov)
    });
    match &result {
        Ok(o) => {
            for c in &o.checks {
                println!("{} {} (observed {:.4e}, bound {:.4e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.observed, c.bound);
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
