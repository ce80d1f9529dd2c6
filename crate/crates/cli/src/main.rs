use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smto_cli::{plan_command, sweep_command, configure_threads, EXIT_INPUT};

/// Multimodal trajectory planning for planar arms and point robots.
#[derive(Parser)]
#[command(name = "smto", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one problem file and write a result file.
    Plan {
        problem: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Directory for per-solution and overview SVG plots.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Override a problem field, e.g. `smto.seed=7`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a grid over O, N and cost_scale_alpha with three seeds per cell.
    Sweep {
        problem: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_INPUT as u8);
    }
    let outcome = match cli.command {
        Command::Plan { problem, output, plot, overrides } => {
            plan_command(&problem, &output, &overrides, plot.as_deref())
        }
        Command::Sweep { problem, grid, output } => sweep_command(&problem, &grid, &output).map(|rows| {
            for r in &rows {
                println!(
                    "O={} N={} alpha={} runs={} failed={} runtime={:.3}s solutions={:.2}",
                    r.max_solutions,
                    r.batch_size,
                    r.cost_scale_alpha,
                    r.runs,
                    r.failed,
                    r.mean_runtime_seconds,
                    r.mean_solution_count
                );
            }
            0
        }),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT as u8)
        }
    }
}
