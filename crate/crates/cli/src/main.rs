use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use copolymer::partition::Boundary;
use copolymer::phasediag::Grid;
use copolymer::spectral::{CLASSIFICATION_TOL, DEFAULT_N_CUT};
use copolymer::verify::DEFAULT_SEED;

mod commands;
mod spec;

/// Periodic copolymer and pinning models: free energy, exact partition
/// functions, limit kernels and path samples.
#[derive(Parser, Debug)]
#[command(name = "copolymer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON charge specification.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output path prefix; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// RNG seed.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Length of the tabulated return kernel (overrides the input file).
    #[arg(long = "n-max")]
    pub n_max: Option<usize>,
    /// Tolerance on |delta - 1| for the critical classification.
    #[arg(long, default_value_t = CLASSIFICATION_TOL)]
    pub tol: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// delta, free energy and regime.
    FreeEnergy(Common),
    /// Regime classification.
    Classify(Common),
    /// log partition functions for N = every, 2 every, ..., N as CSV.
    Partition {
        #[command(flatten)]
        common: Common,
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
    /// Asymptotic constants, with the finite-N ratio at --N.
    Asymptotics {
        #[command(flatten)]
        common: Common,
        #[arg(long = "N", default_value_t = 5000)]
        n: usize,
    },
    /// Path samples: CSV of (sample, n, S_n) and a JSON batch summary.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Path length, or horizon for --infinite.
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value = "free")]
        boundary: Boundary,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        /// Sample the infinite-volume measure.
        #[arg(long)]
        infinite: bool,
        /// Residue class of the limit N -> infinity in the delocalized regime.
        #[arg(long, default_value_t = 0)]
        eta: usize,
        #[arg(long = "n-cut", default_value_t = DEFAULT_N_CUT)]
        n_cut: usize,
    },
    /// Limit kernels, escape weights and the two-phase decomposition.
    Limits {
        #[command(flatten)]
        common: Common,
        #[arg(long = "n-cut", default_value_t = DEFAULT_N_CUT)]
        n_cut: usize,
    },
    /// Free energy and order parameter on a (beta, h) grid as CSV.
    PhaseDiagram {
        #[command(flatten)]
        common: Common,
        /// start:end:step
        #[arg(long = "beta-grid")]
        beta_grid: Option<Grid>,
        /// start:end:step
        #[arg(long = "h-grid")]
        h_grid: Option<Grid>,
        /// Monte Carlo samples per point for rho (0 disables).
        #[arg(long = "mc-samples", default_value_t = 0)]
        mc_samples: usize,
        #[arg(long = "mc-N", default_value_t = copolymer::phasediag::DEFAULT_MC_N)]
        mc_n: usize,
    },
    /// Enumeration and identity self-checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Number of enumeration instances.
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::FreeEnergy(c) => commands::free_energy(&c),
        Command::Classify(c) => commands::classify(&c),
        Command::Partition { common, n, every } => commands::partition(&common, n, every),
        Command::Asymptotics { common, n } => commands::asymptotics(&common, n),
        Command::Sample { common, n, boundary, samples, infinite, eta, n_cut } => {
            commands::sample(&common, n, boundary, samples, infinite, eta, n_cut)
        }
        Command::Limits { common, n_cut } => commands::limits(&common, n_cut),
        Command::PhaseDiagram { common, beta_grid, h_grid, mc_samples, mc_n } => {
            commands::phase_diagram(&common, beta_grid, h_grid, mc_samples, mc_n)
        }
        Command::Verify { common, instances } => commands::verify(&common, instances),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<copolymer::Error>()
                .map(|e| e.kind())
                .or_else(|| e.downcast_ref::<commands::Failed>().map(|_| "verification_failed"))
                .unwrap_or("input");
            let body = serde_json::json!({ "error": { "kind": kind, "message": format!("{e:#}") } });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
