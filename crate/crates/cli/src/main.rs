//! `fedcast`: federated spatiotemporal forecasting runs from one config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedcast_core::config::{Mode, RunConfig};
use fedcast_core::runner::{cmd_evaluate, cmd_generate, cmd_train_fed, cmd_train_local, RunError};

#[derive(Parser)]
#[command(
    name = "fedcast",
    version,
    about = "Federated spatiotemporal forecasting: synthetic data, local training, \
             FedAvg federation with client-side validation, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the federation transport.
    #[arg(long, value_parser = ["inproc", "socket"])]
    transport: Option<String>,
    /// Disable client-side validation (plain FedAvg adopts everything).
    #[arg(long)]
    no_csv: bool,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-client CSV datasets from the synthetic specs.
    Generate(Common),
    /// Train each client on its own data only.
    TrainLocal(Common),
    /// Run the federated rounds across all clients.
    TrainFed(Common),
    /// Evaluate saved checkpoints on the test split.
    Evaluate(Common),
}

impl Command {
    fn mode(&self) -> Mode {
        match self {
            Command::Generate(_) => Mode::Generate,
            Command::TrainLocal(_) => Mode::TrainLocal,
            Command::TrainFed(_) => Mode::TrainFed,
            Command::Evaluate(_) => Mode::Evaluate,
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Generate(c)
            | Command::TrainLocal(c)
            | Command::TrainFed(c)
            | Command::Evaluate(c) => c,
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, RunError> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply_overrides(
        common.seed,
        common.transport.as_deref(),
        common.no_csv,
        common.out.clone(),
    );
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), RunError> {
    let common = cli.command.common();
    let cfg = load_config(common)?;
    match cli.command.mode() {
        Mode::Generate => {
            let files = cmd_generate(&cfg)?;
            for file in files {
                println!("wrote {}", file.display());
            }
        }
        Mode::TrainLocal => {
            let artifacts = cmd_train_local(&cfg)?;
            print_summary(&artifacts.summary);
            println!("reports in {}", artifacts.out_dir.display());
        }
        Mode::TrainFed => {
            let run = cmd_train_fed(&cfg)?;
            if let Some(rounds) = run.artifacts.summary.rounds_run {
                println!("federation finished after {rounds} rounds");
            }
            print_summary(&run.artifacts.summary);
            println!("reports in {}", run.artifacts.out_dir.display());
        }
        Mode::Evaluate => {
            let artifacts = cmd_evaluate(&cfg)?;
            print_summary(&artifacts.summary);
            println!("reports in {}", artifacts.out_dir.display());
        }
    }
    Ok(())
}

fn print_summary(summary: &fedcast_core::report::RunSummary) {
    for client in &summary.clients {
        match (client.naive_mae, client.naive_rmse) {
            (Some(nm), Some(nr)) => println!(
                "{}: MAE {:.4} RMSE {:.4} (seasonal-naive MAE {:.4} RMSE {:.4})",
                client.id, client.mae, client.rmse, nm, nr
            ),
            _ => println!(
                "{}: MAE {:.4} RMSE {:.4}",
                client.id, client.mae, client.rmse
            ),
        }
    }
}

fn main() -> ExitCode {
    // malformed invocations count as config errors (exit 1); --help and
    // --version stay successful
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedcast: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
