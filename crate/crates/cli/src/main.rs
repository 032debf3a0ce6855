use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wbc_cli::commands;

#[derive(Parser)]
#[command(name = "wbc", version, about = "Whole-body QP control of a simulated biped")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write logs and plots.
    Run { config: PathBuf },
    /// Check dynamics, QP and attitude control against independent oracles.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one episode per combination of parameter values.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,...` with a dotted config key; repeat for a grid.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => commands::run(config),
        Command::Verify { seed } => commands::verify(*seed),
        Command::Sweep { config, params } => commands::sweep(config, params),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::EXIT_CONFIG)
        }
    }
}
