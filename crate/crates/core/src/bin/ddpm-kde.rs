use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ddpm_kde::experiments::{run, ExperimentConfig, ExperimentKind};
use ddpm_kde::Error;

#[derive(Parser)]
#[command(version, about = "Diffusion sampling with the empirical optimal score, and its KDE twin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score-approximation error versus training-set size.
    ScoreError(RunArgs),
    /// Backward sampling with the exact and/or empirical optimal score.
    Generate(RunArgs),
    /// Compare the empirical-score sampler with the matched Gaussian mixture.
    KdeCompare(RunArgs),
    /// Evaluate the TV bounds and weighted-average inequalities.
    BoundsCheck(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML config file.
    #[arg(long, required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: figure2, figure3, kde-compare, bounds.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: number of cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(kind: ExperimentKind, args: RunArgs) -> Result<bool, Error> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => unreachable!("clap requires one of --config/--preset"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    cfg.seed()?;
    let out = args
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = args.threads {
        if k == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(k);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| run(kind, &cfg, &out))?;
    for f in &outcome.files {
        println!("{}", f.display());
    }
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::ScoreError(a) => (ExperimentKind::ScoreError, a),
        Command::Generate(a) => (ExperimentKind::Generate, a),
        Command::KdeCompare(a) => (ExperimentKind::KdeCompare, a),
        Command::BoundsCheck(a) => (ExperimentKind::BoundsCheck, a),
    };
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("ddpm-kde: {kind}: check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("ddpm-kde: {e}");
            ExitCode::from(2)
        }
    }
}
