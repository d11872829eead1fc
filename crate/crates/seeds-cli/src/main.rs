//! `seeds`: sample, order studies, solver comparisons and grids from a JSON
//! config plus flag overrides.
//!
//! Exit codes: 0 success, 1 configuration error, 2 acceptance failure.

mod commands;
mod config;
mod selftest;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::OrderKind;
use config::{ModeName, RunConfig};

/// A check that ran to completion and failed.
#[derive(Debug)]
pub struct Acceptance(pub String);

impl std::fmt::Display for Acceptance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "acceptance failure: {}", self.0)
    }
}

impl std::error::Error for Acceptance {}

#[derive(Parser, Debug)]
#[command(name = "seeds", version, about = "Exponential SDE solvers for diffusion sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(clap::Args, Debug, Default)]
struct Flags {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Grid size `M`.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Solver name, optionally suffixed `-np` or `-dp`.
    #[arg(long, global = true)]
    solver: Option<String>,
    /// vp, vp-cosine, ve or edm.
    #[arg(long, global = true)]
    schedule: Option<String>,
    /// noise or data prediction.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample paths from the prior and write terminal states as CSV.
    Sample {
        /// Also write one CSV per path with every grid node.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Estimate the strong or weak convergence order.
    Order {
        #[arg(value_enum, default_value = "strong")]
        kind: OrderKind,
    },
    /// Per-step difference between this run's solver and another.
    Compare {
        /// Solver name or config file of the second run.
        against: String,
    },
    /// Print the time grid.
    Grid,
    /// Run the invariant suite.
    Selftest,
}

fn resolve(flags: &Flags) -> Result<RunConfig> {
    let mut c = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &flags.schedule {
        c.set_schedule(s)?;
    }
    if let Some(s) = &flags.solver {
        c.solver.set_name(s)?;
    }
    if let Some(m) = &flags.mode {
        c.solver.mode = ModeName::parse(m)?;
    }
    if let Some(v) = flags.seed {
        c.seed = v;
    }
    if let Some(v) = flags.paths {
        c.paths = Some(v);
    }
    if let Some(v) = flags.steps {
        c.grid.steps = v;
    }
    if let Some(v) = &flags.out {
        c.out = Some(v.clone());
    }
    if let Some(v) = flags.workers {
        c.workers = v;
    }
    if let Some(v) = flags.threshold {
        c.threshold = Some(v);
    }
    Ok(c)
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.flags)?;
    if let Command::Sample { trajectories: Some(dir) } = &cli.command {
        cfg.trajectories = Some(dir.clone());
    }
    if cli.flags.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    match cli.command {
        Command::Sample { .. } => commands::sample_cmd(&cfg),
        Command::Order { kind } => commands::order_cmd(&cfg, kind),
        Command::Compare { against } => commands::compare_cmd(&cfg, &against),
        Command::Grid => commands::grid_cmd(&cfg),
        Command::Selftest => {
            if cfg.workers == 0 {
                anyhow::bail!("workers: must be at least 1");
            }
            let checks = selftest::run_all(cfg.seed, cfg.paths_or(selftest::SELFTEST_PATHS), cfg.workers)?;
            let mut out = io::stdout().lock();
            let ok = selftest::print(&checks, &mut out)?;
            out.flush()?;
            if ok {
                Ok(())
            } else {
                Err(Acceptance("selftest".into()).into())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Acceptance>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
