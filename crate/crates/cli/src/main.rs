use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use spde_mlmc_cli::commands::{self, Context};
use spde_mlmc_cli::config::Config;
use spde_mlmc_cli::output::OutputDir;
use spde_mlmc_cli::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Sample,
    VarianceMap,
    Mlmc,
    CovarianceCheck,
    Darcy,
}

/// Matérn field sampling and multilevel Monte Carlo for Darcy flow.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Overrides `sampling.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all outputs are independent of this value.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the coupled coarse field with every sample.
    #[arg(long)]
    pair: bool,
}

fn run(args: Args) -> Result<(), CliError> {
    let mut config = Config::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.sampling.seed = seed;
    }
    if let Some(out) = args.out {
        config.output.dir = out;
    }
    if args.pair {
        config.sampling.pair = true;
    }
    config.validate()?;
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let ctx = Context {
        seed: config.sampling.seed,
        out: OutputDir::create(&config.output.dir)?,
        config,
    };
    match args.command {
        Command::Sample => commands::sample(&ctx),
        Command::VarianceMap => commands::variance_map(&ctx),
        Command::Mlmc => commands::mlmc(&ctx),
        Command::CovarianceCheck => commands::covariance_check(&ctx),
        Command::Darcy => commands::darcy(&ctx),
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
