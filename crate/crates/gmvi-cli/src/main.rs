//! `gmvi` — experiment runner for the block-structured GMVI solvers.
//!
//! Subcommands: `run <config.toml>` executes every configured solver run and
//! writes traces plus a summary; `summarize <dir>` tabulates existing
//! traces; `datagen` writes a synthetic LibSVM dataset. Exit status: 0 on
//! success, 1 on configuration or I/O errors, 2 on internal assertions.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

/// Environment variable naming the default root for relative output paths.
const OUT_ROOT_ENV: &str = "GMVI_OUT_ROOT";

#[derive(Parser)]
#[command(
    name = "gmvi",
    version,
    about = "Benchmark harness for monotone VI solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every solver in an experiment config and emit traces + summary.
    Run(RunArgs),
    /// Tabulate the trace CSVs in a directory.
    Summarize(SummarizeArgs),
    /// Write a synthetic classification dataset in LibSVM format.
    Datagen(DatagenArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct SummarizeArgs {
    dir: PathBuf,
    /// Tolerance for the passes-to-tolerance column.
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

#[derive(Args)]
struct DatagenArgs {
    /// Output file path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 123)]
    d: usize,
    #[arg(long, default_value_t = 14)]
    avg_nnz: usize,
    /// Normalized separation margin enforced by rejection; 0 disables.
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Fraction of labels flipped after margin enforcement.
    #[arg(long, default_value_t = 0.0)]
    flip: f64,
    #[arg(long, default_value_t = 1234)]
    seed: u64,
}

fn resolve_out_dir(cfg_dir: &std::path::Path, cli_out: Option<PathBuf>) -> PathBuf {
    let dir = cli_out.unwrap_or_else(|| cfg_dir.to_path_buf());
    if dir.is_absolute() {
        return dir;
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(dir),
        None => dir,
    }
}

fn dispatch(cli: Cli) -> gmvi::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let mut cfg = ExperimentConfig::load(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let out_dir = resolve_out_dir(&cfg.out_dir, args.out);
            runner::run_experiment(&cfg, &out_dir, args.workers)?;
            println!("wrote artifacts to {}", out_dir.display());
            Ok(())
        }
        Command::Summarize(args) => {
            let report = runner::summarize(&args.dir, args.tolerance)?;
            print!("{report}");
            Ok(())
        }
        Command::Datagen(args) => {
            let ds = gmvi::data::synth_margin_classification(
                args.n,
                args.d,
                args.avg_nnz,
                args.margin,
                args.flip,
                args.seed,
            );
            ds.write_libsvm(&args.out)?;
            println!(
                "wrote {} samples x {} features to {}",
                ds.n,
                ds.d,
                args.out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| dispatch(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(_) => {
            eprintln!("internal assertion failed");
            ExitCode::from(2)
        }
    }
}
