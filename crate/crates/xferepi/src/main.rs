use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xferepi::{ConfigError, ExperimentConfig, RunError, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "xferepi", version, about = "Transfer learning for epidemic forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate source and target epidemics, or ingest case files.
    Simulate(RunArgs),
    /// Build windowed datasets and the test-set snapshot.
    Prepare(RunArgs),
    /// Fit every configured regime.
    Train(RunArgs),
    /// Score predictions and compute the similarity map.
    Evaluate(RunArgs),
    /// Write the report bundle.
    Report(RunArgs),
    /// Run every stage in order.
    All(RunArgs),
    /// Check a configuration file without running anything.
    #[command(name = "validate_config", alias = "validate-config")]
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Re-run stages even when their inputs are unchanged.
    #[arg(long)]
    force: bool,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
    /// Run directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (args, stage) = match cli.command {
        Command::ValidateConfig { config } => return validate(&config),
        Command::Simulate(a) => (a, Some(Stage::Simulate)),
        Command::Prepare(a) => (a, Some(Stage::Prepare)),
        Command::Train(a) => (a, Some(Stage::Train)),
        Command::Evaluate(a) => (a, Some(Stage::Evaluate)),
        Command::Report(a) => (a, Some(Stage::Report)),
        Command::All(a) => (a, None),
    };
    let opts = RunOptions {
        force: args.force,
        jobs: args.jobs.map(|j| j as usize),
        out: args.out,
    };
    match xferepi::run(&args.config, stage, &opts) {
        Ok(runner) => {
            println!("{}", runner.dir().display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn validate(path: &std::path::Path) -> ExitCode {
    match ExperimentConfig::load(path) {
        Ok(_) => {
            println!("{}: ok", path.display());
            ExitCode::SUCCESS
        }
        Err(ConfigError::Invalid(diags)) => {
            for d in &diags {
                println!("{d}");
            }
            ExitCode::from(2)
        }
        Err(e) => fail(&RunError::Config(e)),
    }
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
