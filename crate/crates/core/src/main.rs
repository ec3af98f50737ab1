use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use entropic_jko::cli::{run, Invocation};
use entropic_jko::config::Command;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Entropic JKO flow.
    Flow,
    /// Reference PDE solve.
    Pde,
    /// Flow and PDE side by side, with L1 errors.
    Compare,
    /// Schrödinger cost and potentials between two densities.
    Sinkhorn,
    /// Error study over (alpha, tau).
    Sweep,
}

/// Entropic JKO scheme on the flat torus.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    command: Cmd,
    /// Key-value config file.
    #[arg(long)]
    config: PathBuf,
    /// Override one config key, e.g. `--set scheme.tau=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let command = match args.command {
        Cmd::Flow => Command::Flow,
        Cmd::Pde => Command::Pde,
        Cmd::Compare => Command::Compare,
        Cmd::Sinkhorn => Command::Sinkhorn,
        Cmd::Sweep => Command::Sweep,
    };
    let inv = Invocation {
        command,
        config: args.config,
        overrides: args.overrides,
        out: args.out,
    };
    match run(&inv) {
        Ok(dir) => {
            log::info!("outputs in {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("entropic-jko: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
