use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bsdelab::{run, Command, Config};

#[derive(Parser)]
#[command(
    name = "bsdelab",
    version,
    about = "BSDE convergence experiments with non-Lipschitz drivers"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve a single BSDE.
    Solve(Common),
    /// Run the full mollification ladder.
    Converge(Common),
    /// Backward ODE, envelope and vanishing-limit suite.
    Envelope(Common),
    /// Path decomposition suite.
    Decompose(Common),
    /// Window and density suite.
    Girsanov(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Solve(c) => (Command::Solve, c),
        Sub::Converge(c) => (Command::Converge, c),
        Sub::Envelope(c) => (Command::Envelope, c),
        Sub::Decompose(c) => (Command::Decompose, c),
        Sub::Girsanov(c) => (Command::Girsanov, c),
    };
    let result = Config::load(&common.config).and_then(|cfg| {
        let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
        run(command, &cfg, &out)
    });
    match result {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            println!("wrote {} files to {}", outcome.files.len(), outcome.dir.display());
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
