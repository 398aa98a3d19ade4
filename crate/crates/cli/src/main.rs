use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use turbdiff_cli::{execute, load_config, resolve_threads, write_atomic, CliError, Command, Status};
use turbdiff_cli::error::EXIT_STATISTICAL;

#[derive(Parser)]
#[command(name = "turbdiff", version, about = "Passive tracer diffusion in Markov Gaussian velocity fields")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// Run configuration (TOML, or a previous run's manifest.json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides `ensemble.master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Taylor-Kubo matrices, regularized covariances and the phase verdict.
    Kubo,
    /// Tracer ensemble, MSD and VACF estimates, comparison with the prediction.
    Simulate,
    /// Phase verdict (and optionally a fitted exponent) over an (alpha, beta) grid.
    Sweep,
    /// Scaling fit of a corrector variance integral.
    Corrector,
    /// Statistical validation battery of the synthetic field.
    ValidateField,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Kubo => Command::Kubo,
            Cmd::Simulate => Command::Simulate,
            Cmd::Sweep => Command::Sweep,
            Cmd::Corrector => Command::Corrector,
            Cmd::ValidateField => Command::ValidateField,
        }
    }
}

fn run(args: Args) -> Result<i32, CliError> {
    let path = args.config.ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut cfg = load_config(&path)?;
    if let Some(seed) = args.seed {
        cfg.ensemble.master_seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    let env = std::env::var("TURBDIFF_THREADS").ok();
    let threads = resolve_threads(args.threads, env.as_deref())?;
    let command = Command::from(args.command);
    let outputs = execute(command, &cfg, threads)?;
    for w in &outputs.warnings {
        eprintln!("warning: {w}");
    }
    let dir = PathBuf::from(&cfg.output.dir);
    write_atomic(&dir, &outputs.files)?;
    println!("{}", outputs.summary);
    println!("wrote {} files to {}", outputs.files.len(), dir.display());
    Ok(match outputs.status {
        Status::Ok => 0,
        Status::ChecksFailed => EXIT_STATISTICAL,
    })
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
