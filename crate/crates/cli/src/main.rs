use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isaacs_fd_cli::{configure_threads, run, StudyKind};

/// Finite-difference experiments for parabolic Isaacs equations.
#[derive(Parser)]
#[command(name = "isaacs-fd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once and write the grid solution.
    Solve(RunArgs),
    /// Sup-norm error against the exact solution over a list of h.
    Rates(RunArgs),
    /// Gap between the upper and lower K-truncated solutions.
    Kgap(RunArgs),
    /// Hölder seminorm of the solution over a list of epsilon.
    Regularity(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Solve(a) => (StudyKind::Solve, a),
        Command::Rates(a) => (StudyKind::Rates, a),
        Command::Kgap(a) => (StudyKind::Kgap, a),
        Command::Regularity(a) => (StudyKind::Regularity, a),
    };
    let result = configure_threads().and_then(|()| run(kind, &args.config, args.out.as_deref()));
    match result {
        Ok(manifest) => {
            println!("{}", serde_json::to_string(&manifest.results).unwrap_or_default());
            for s in manifest.solver_stats.iter().filter(|s| !s.certified) {
                eprintln!(
                    "warning: {}: residual {} exceeds bound {}",
                    s.label, s.max_residual, s.residual_bound
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
