use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use endico::cli::{cmd_compare, cmd_run, cmd_validate, CliError, RunOptions};
use endico::ControlMode;

#[derive(Parser)]
#[command(name = "endico", version, about = "Distributed closed-form Volt-Var / Volt-Watt controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the controller over a scenario and write trace and report files.
    Run(RunArgs),
    /// Run, then compare each epoch against the centralized baseline.
    Compare(RunArgs),
    /// Run the seeded randomized property suites.
    Validate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Vvc,
    Vwc,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    /// Record per-node closed-form and numeric-oracle solve times.
    #[arg(long)]
    timing: bool,
    /// Accepted for symmetry with `validate`; runs are deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_points: Option<usize>,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            scenario: self.scenario.clone(),
            out: self.out.clone(),
            mode: self.mode.map(|m| match m {
                Mode::Vvc => ControlMode::Vvc,
                Mode::Vwc => ControlMode::Vwc,
            }),
            alpha: self.alpha,
            timing: self.timing,
            grid_points: self.grid_points,
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            print!("{}", cmd_run(&args.options())?.summary());
            Ok(())
        }
        Command::Compare(args) => {
            print!("{}", cmd_compare(&args.options())?.summary());
            Ok(())
        }
        Command::Validate { seed, count } => cmd_validate(seed, count, &mut std::io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ENDICO_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("endico: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
