use std::path::PathBuf;
use std::process::ExitCode;

use adr_cli::{
    cmd_export, cmd_metrics, cmd_optimize, cmd_optimize_gradient, cmd_simulate, CliError,
    Overrides, RunConfig,
};
use clap::{Parser, Subcommand};
use log::{error, info};

/// Simulation and optimal elution control of a chromatography column.
///
/// Log verbosity follows RUST_LOG (default `info`).
#[derive(Parser)]
#[command(name = "adrctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; omitted keys take the case-study defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Ensemble seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of shooting intervals.
    #[arg(long, global = true)]
    ns: Option<usize>,
    /// Elution duration in minutes.
    #[arg(long = "elution-min", global = true)]
    elution_min: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, elute with the configured profile, strip.
    Simulate,
    /// Optimize a linear (start, end) elution gradient.
    OptimizeGradient,
    /// Gradient baseline, ensemble multi-start and optional refinement.
    Optimize,
    /// Recompute metrics from a chromatogram CSV and print them as JSON.
    Metrics { chromatogram: PathBuf },
    /// Write the multiple shooting NLP for an external solver.
    ExportNlp,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        intervals: cli.ns,
        elution_min: cli.elution_min,
    };
    overrides.apply(&mut cfg)?;
    let dir = cfg.output.dir.clone();
    let artifacts = match cli.command {
        Command::Simulate => cmd_simulate(&cfg)?,
        Command::OptimizeGradient => cmd_optimize_gradient(&cfg)?,
        Command::Optimize => cmd_optimize(&cfg)?,
        Command::Metrics { chromatogram } => {
            let m = cmd_metrics(&cfg, &chromatogram)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&m).expect("metrics serialize")
            );
            return Ok(());
        }
        Command::ExportNlp => {
            let (path, vars) = cmd_export(&cfg, &dir)?;
            info!("wrote {} ({vars} decision variables)", path.display());
            return Ok(());
        }
    };
    artifacts.write(&dir)?;
    let m = &artifacts.report.metrics;
    info!(
        "yield {:.6}, productivity {:.6e} /min, results in {}",
        m.yield_fraction,
        m.productivity,
        dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
