//! `slowvol` command-line studies.
//!
//! Exit status: 0 pass, 1 the study ran but failed its threshold,
//! 2 invalid configuration, 3 inconclusive, 4 numerical failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "slowvol",
    version,
    about = "Portfolio studies under a slowly varying volatility factor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Study configuration (TOML, dotted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides `mc.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Merton value, risk tolerance and strategy over a (t, x) grid.
    Merton,
    /// Zeroth- and first-order expansion terms over a (t, x, z) grid.
    Expand,
    /// Convergence of the simulated value to its first-order expansion.
    Converge,
    /// Paired comparison of a strategy family against the zeroth-order strategy.
    Optimality,
    /// Riccati coefficients of the affine moments and their explosion time.
    Riccati,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Merton => "merton",
            Command::Expand => "expand",
            Command::Converge => "converge",
            Command::Optimality => "optimality",
            Command::Riccati => "riccati",
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Numerical(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<slowvol::Error> for Failure {
    fn from(e: slowvol::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

fn run(cli: &Cli) -> Result<Outcome, Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Validation("--threads: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Validation(format!("--threads: {e}")))?;
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Validation("--config: missing".into()))?;
    let cfg = config::Config::load(path)?;
    let study = cfg.study.clone().unwrap_or_else(|| cli.command.name().to_string());
    let out = output::Output::new(&cli.out, &study)?;
    let ctx = commands::Context {
        cfg,
        seed: cli.seed,
        out,
    };
    match cli.command {
        Command::Merton => commands::merton(&ctx),
        Command::Expand => commands::expand(&ctx),
        Command::Converge => commands::converge(&ctx),
        Command::Optimality => commands::optimality(&ctx),
        Command::Riccati => commands::riccati(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            eprintln!("{}: {outcome:?}", cli.command.name());
            ExitCode::from(match outcome {
                Outcome::Pass => 0,
                Outcome::Fail => 1,
                Outcome::Inconclusive => 3,
            })
        }
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(4)
        }
    }
}
