//! `dmps` command-line tool.
//!
//! Exit codes: 0 ok, 2 config, 3 io, 4 numeric or dimension, 5 verification.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use config::{ConfigError, RunConfig};
use run::{cmd_sample, cmd_sweep, cmd_toy, cmd_verify, CliError, ToyArgs};

#[derive(Parser)]
#[command(name = "dmps", version, about = "Posterior sampling for noisy linear inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a measurement from the configured input and sample the posterior.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[run] seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `[run] output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Like `sample`, once per lambda with shared chain seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        lambdas: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scalar pseudo-likelihood vs exact perturbed likelihood, written as CSV.
    Toy {
        #[arg(long, default_value_t = 25.0)]
        sigma0: f64,
        #[arg(long = "x-t", default_value_t = 5.0, allow_negative_numbers = true)]
        x_t: f64,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.99)]
        abar_max: f64,
        #[arg(long, default_value_t = 0.01)]
        abar_min: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Cross-checks the likelihood score forms, gradients and operators.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "8")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb: f64,
    },
}

fn load(path: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<(RunConfig, PathBuf), CliError> {
    let mut config = RunConfig::load(path).map_err(|e| match e {
        ConfigError::Io(m) => CliError::Io(m),
        ConfigError::Invalid(m) => CliError::Config(m),
    })?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let out = out.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((config, out))
}

fn set_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("DMPS_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("DMPS_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    set_threads()?;
    match cli.command {
        Command::Sample { config, seed, out } => {
            let (config, out) = load(&config, seed, out)?;
            cmd_sample(config, &out)
        }
        Command::Sweep {
            config,
            lambdas,
            seed,
            out,
        } => {
            let (config, out) = load(&config, seed, out)?;
            cmd_sweep(config, &lambdas, &out)
        }
        Command::Toy {
            sigma0,
            x_t,
            steps,
            abar_max,
            abar_min,
            out,
        } => {
            let path = cmd_toy(
                ToyArgs {
                    sigma0,
                    x_t,
                    steps,
                    abar_max,
                    abar_min,
                },
                &out,
            )?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Verify { seed, sizes, perturb } => cmd_verify(seed, &sizes, perturb),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
