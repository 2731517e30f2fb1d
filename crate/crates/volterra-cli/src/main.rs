//! `volterra`: run the lift-based experiments from a JSON config and emit
//! CSV data, a JSON report, and a reproducibility manifest.
//!
//! Exit codes: 0 pass, 1 hard error, 2 statistical soft-fail.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use config::{Experiment, RunConfig};
use experiments::Outcome;

#[derive(Parser)]
#[command(
    name = "volterra",
    version,
    about = "Simulate stochastic Volterra equations through their Markovian lift"
)]
struct Args {
    /// JSON run configuration; omitting it runs the validate suite with
    /// defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config path count.
    #[arg(long)]
    paths: Option<u64>,
    /// Worker threads for path sampling (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Suppress the summary lines on stdout.
    #[arg(long)]
    quiet: bool,
}

fn run(args: &Args) -> anyhow::Result<Outcome> {
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| anyhow::anyhow!("--threads: {e}"))?;
    }

    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default_validate(args.seed.unwrap_or(0)),
    };
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.sim.n_paths = paths;
    }
    if args.config.is_none() && cfg.experiment != Experiment::Validate {
        anyhow::bail!("--config is required for experiments other than validate");
    }

    let built = config::build(&cfg)?;
    let hash = cfg.hash();
    let started = Instant::now();
    let result = experiments::run(&built)?;
    let wall = started.elapsed().as_secs_f64();

    let (dir, manifest) = output::write_outputs(
        &args.out,
        built.experiment.as_str(),
        &hash,
        cfg.sim.seed,
        wall,
        &result,
    )?;

    if !args.quiet {
        println!("{}", result.summary);
        println!("outputs: {}", dir.display());
        println!("data.csv sha256: {}", manifest.digests.data_csv);
        println!("report.json sha256: {}", manifest.digests.report_json);
    }
    if let Outcome::SoftFail(reasons) = &result.outcome {
        for reason in reasons {
            eprintln!("soft fail: {reason}");
        }
    }
    Ok(result.outcome)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::SoftFail(_)) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
