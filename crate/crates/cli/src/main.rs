mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use mpc_mci::Variant;

use commands::Failure;
use config::{Command, Overrides, RunConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_DRIVER: u8 = 2;
const EXIT_CHECK: u8 = 3;

/// MPC with a terminal control barrier function: feasibility grids,
/// tracking runs, reachability probes, the double-integrator example and
/// property checks.
#[derive(Parser, Debug)]
#[command(name = "mpc-mci", version)]
struct Cli {
    /// Command to run; may also come from the config file.
    #[arg(value_enum)]
    command: Option<Command>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    plant: Option<String>,
    /// Grid preset for the fixed (theta, v, omega): 1 or 2.
    #[arg(long)]
    case: Option<u8>,
    /// mpc, nmpc-dcbf, dtcbf-mpc or mpc-mci.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Comma-separated horizon list, e.g. 2,6,11.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    tol_feas: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Tracking duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Comma-separated initial state.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Sampling seed for `check`.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: mpc_mci::Error| e.to_string())
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            command: self.command,
            plant: self.plant.clone(),
            case: self.case,
            variant: self.variant,
            horizons: self.horizons.clone(),
            jobs: self.jobs,
            output_dir: self.output_dir.clone(),
            tol_feas: self.tol_feas,
            gamma: self.gamma,
            nx: self.nx,
            ny: self.ny,
            duration: self.duration,
            x0: self.x0.clone(),
            seed: self.seed,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let base = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            RunConfig::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => RunConfig::default(),
    };
    base.resolve(cli.overrides())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let run = match cfg.command() {
        Command::Feasibility => commands::feasibility,
        Command::Track => commands::track,
        Command::Reach => commands::reach,
        Command::Appendix => commands::appendix,
        Command::Check => commands::check,
    };
    match run(&cfg) {
        Ok(outcome) if outcome.check_failed => ExitCode::from(EXIT_CHECK),
        Ok(_) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Driver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DRIVER)
        }
    }
}
