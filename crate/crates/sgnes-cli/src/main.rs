use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgnes_cli::config::{parse_inner_schedule, ExperimentConfig};
use sgnes_cli::experiment::{compare_schedules, probe, reference_for, run_experiment};

/// Distributed stochastic equilibrium-seeking experiments.
#[derive(Parser)]
#[command(name = "sgnes", version, about)]
struct Cli {
    /// Root directory for outputs and the reference cache.
    /// Defaults to $SGNES_OUT_ROOT or the current directory.
    #[arg(long, global = true)]
    out_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment: metrics.csv, meta.json and plot panels.
    Run { config: PathBuf },
    /// Run the same experiment under several inner-iteration schedules.
    Compare {
        config: PathBuf,
        /// Comma-separated schedule specs: constant:T or power:SCALE:EXP:FLOOR.
        #[arg(long)]
        schedules: String,
    },
    /// Compute (and cache) the centralized reference solution.
    Reference { config: PathBuf },
    /// Report sampled monotonicity and variance-bound diagnostics.
    Probe { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_root = cli
        .out_root
        .or_else(|| std::env::var_os("SGNES_OUT_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    match dispatch(cli.command, &out_root) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command, out_root: &std::path::Path) -> Result<(), Box<dyn std::error::Error>> {
    match command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let artifacts = run_experiment(&cfg, out_root)?;
            println!(
                "wrote {} rows to {}",
                artifacts.records.len(),
                artifacts.out_dir.join("metrics.csv").display()
            );
            println!("final avg normalized distance: {}", artifacts.final_distance);
        }
        Command::Compare { config, schedules } => {
            let cfg = ExperimentConfig::load(&config)?;
            let mut specs = Vec::new();
            for spec in schedules.split(',').filter(|s| !s.is_empty()) {
                specs.push(parse_inner_schedule(spec)?);
            }
            let (csv_path, runs) = compare_schedules(&cfg, &specs, out_root)?;
            println!("wrote {} aligned runs to {}", runs.len(), csv_path.display());
            for ((label, _), records) in specs.iter().zip(runs.iter()) {
                let last = records.last().map(|r| r.dist_avg_norm_star).unwrap_or(f64::NAN);
                println!("  {label}: final distance {last}");
            }
        }
        Command::Reference { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let built = sgnes_cli::build_experiment(&cfg)?;
            let (sol, meta) = reference_for(&built, &cfg, out_root)?;
            println!(
                "reference: residual {:.3e} after {} iterations ({}, cached: {})",
                sol.residual, sol.iterations, sol.method, meta.cached
            );
        }
        Command::Probe { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let text = probe(&cfg, out_root)?;
            println!("{text}");
        }
    }
    Ok(())
}
