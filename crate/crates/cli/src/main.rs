//! `orbitroa`: orbit refinement, transverse linearization, Lyapunov seeds,
//! SoS certificates, transverse LQR and Monte-Carlo validation from the
//! command line. Every artifact is a file under `--out`.

mod commands;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use orbitroa::Error;

#[derive(Parser, Debug)]
#[command(name = "orbitroa", version, about = "Certified regions of orbital stability for hybrid polynomial systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Refine a periodic orbit from a guess by shooting.
    Orbit(Common),
    /// Build the surfaces and the transverse linearization.
    Translin(Common),
    /// Quadratic seed from the periodic Lyapunov equation, with its level.
    Seed(Common),
    /// SoS certificate by alternation from the quadratic seed.
    Verify(Common),
    /// Transverse LQR gain from the periodic jump-Riccati equation.
    Stabilize(Common),
    /// Optimize the surface normals.
    OptimizeZ(Common),
    /// Simulate the (closed-loop) hybrid flow and write a trajectory CSV.
    Simulate(Common),
    /// Monte-Carlo check of a certificate from its boundary.
    Validate(Common),
    /// orbit, translin, [stabilize], seed, verify, validate in one run.
    Pipeline(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ZChoice {
    /// Orthogonal for continuous orbits, blended for hybrid ones.
    Auto,
    Orthogonal,
    Blended,
    File,
    Optimize,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Orbit JSON; refined from the guess when absent.
    #[arg(long)]
    pub orbit: Option<PathBuf>,
    /// Orbit guess JSON (default: `<model>.guess.json`).
    #[arg(long)]
    pub guess: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub z: ZChoice,
    /// Surface grid JSON for `--z file`.
    #[arg(long)]
    pub surfaces: Option<PathBuf>,
    /// Tau samples per segment.
    #[arg(long, default_value_t = 64)]
    pub taus: usize,
    /// Doubling cap for the tau refinement (no doubling when equal to `--taus`).
    #[arg(long)]
    pub max_taus: Option<usize>,
    /// Degree of V (2 or 4).
    #[arg(long, default_value_t = 4)]
    pub vdeg: u32,
    /// Margins for decrease, well-posedness and positivity.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub deltas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Quadratic seed JSON written by `seed` (recomputed when absent).
    #[arg(long)]
    pub quadratic: Option<PathBuf>,
    /// Gain JSON written by `stabilize`; closes the loop.
    #[arg(long)]
    pub gain: Option<PathBuf>,
    /// Certificate JSON written by `verify`.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    /// Validation samples.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    /// Simulation horizon in periods.
    #[arg(long, default_value_t = 10.0)]
    pub periods: f64,
    /// Initial state for `simulate` (default: on the orbit).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Trajectory CSVs kept by `validate`.
    #[arg(long, default_value_t = 0)]
    pub record: usize,
    /// Exponent of the surface cost.
    #[arg(long, default_value_t = 50)]
    pub p: u32,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Alternation iterations.
    #[arg(long, default_value_t = 10)]
    pub alt_iter: usize,
    /// Taylor degree for non-polynomial atoms.
    #[arg(long, default_value_t = 3)]
    pub taylor: u32,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Infeasible(_) | Error::LevelInfeasible(_) | Error::Unstable(_) | Error::RiccatiDivergence(_)) => 2,
        _ => match e.downcast_ref::<commands::Rejected>() {
            Some(_) => 2,
            None => 1,
        },
    }
}

fn threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("ORBITROA_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("ORBITROA_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = threads().and_then(|_| match &cli.command {
        Command::Orbit(c) => commands::orbit(c),
        Command::Translin(c) => commands::translin(c),
        Command::Seed(c) => commands::seed(c),
        Command::Verify(c) => commands::verify(c),
        Command::Stabilize(c) => commands::stabilize(c),
        Command::OptimizeZ(c) => commands::optimize_z(c),
        Command::Simulate(c) => commands::simulate(c),
        Command::Validate(c) => commands::validate(c),
        Command::Pipeline(c) => commands::pipeline(c),
    });
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
