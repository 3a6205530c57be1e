use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tiebout_cli::{run, Command, Flags};

#[derive(Parser)]
#[command(name = "tiebout", version, about = "Tiebout-Nash equilibria of local public good economies")]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    /// Output directory (overrides `[output] dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Keep fixed points with empty communities.
    #[arg(long, global = true)]
    allow_empty: bool,

    /// Print the report to stdout.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Find equilibria (basic or extended model, per config).
    Solve { config: PathBuf },
    /// Re-check the equilibria stored in a report.
    Verify {
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Solve, then classify every equilibrium's stability.
    Stability { config: PathBuf },
    /// Solve, then aggregate welfare and probe for Pareto improvements.
    Welfare { config: PathBuf },
    /// Comparative statics along the `[sweep]` plan.
    Sweep { config: PathBuf },
    /// Emit plot data: indifference loci, borders, partitions.
    Plotdata {
        config: PathBuf,
        #[arg(long)]
        locus: bool,
        #[arg(long)]
        borders: bool,
        #[arg(long)]
        partition: bool,
    },
    /// Schema and assumption checks; never solves.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, config) = match cli.command {
        Sub::Solve { config } => (Command::Solve, config),
        Sub::Verify { config, report } => (Command::Verify { report }, config),
        Sub::Stability { config } => (Command::Stability, config),
        Sub::Welfare { config } => (Command::Welfare, config),
        Sub::Sweep { config } => (Command::Sweep, config),
        Sub::Plotdata { config, locus, borders, partition } => {
            (Command::Plotdata { locus, borders, partition }, config)
        }
        Sub::Validate { config } => (Command::Validate, config),
    };
    let flags = Flags { out: cli.out, threads: cli.threads, allow_empty: cli.allow_empty };
    let outcome = run(&command, &config, &flags);
    if cli.verbose || command == Command::Validate {
        print!("{}", outcome.report.to_json());
    }
    for d in &outcome.report.diagnostics {
        eprintln!("{:?} [{}] {}", d.severity, d.code, d.message);
    }
    for path in &outcome.written {
        eprintln!("wrote {}", path.display());
    }
    ExitCode::from(outcome.exit_code as u8)
}
