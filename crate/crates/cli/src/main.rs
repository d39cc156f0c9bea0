use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use slowbond_core::harness::{run_experiment, ExperimentConfig, ExperimentKind, CONFIG_REFERENCE};

/// Exclusion process with slow bonds across a membrane: experiments and checks.
#[derive(Debug, Parser)]
#[command(name = "slowbond", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rate-field summaries and per-size rate dumps
    Rates(RunArgs),
    /// Smallest eigenpairs of the random-walk generator
    Spectrum(RunArgs),
    /// Discrete-to-continuum generator residual over a lattice scan
    GeneratorConvergence(RunArgs),
    /// Replica pairings against the semigroup prediction
    Hydro(RunArgs),
    /// Martingale quadratic variation against its bound
    Qv(RunArgs),
    /// Cross-method evolution, zero solution and the R(t) series
    Uniqueness(RunArgs),
    /// Print the configuration reference
    ConfigReference,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment configuration (TOML)
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Base seed, overriding `replicas.seed`
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir`
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for replica parallelism
    #[arg(long, value_name = "K", env = "SLOWBOND_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// `Ok(false)` when an invariant failed.
fn dispatch(cli: Cli) -> Result<bool> {
    let (kind, args) = match cli.command {
        Command::Rates(a) => (ExperimentKind::Rates, a),
        Command::Spectrum(a) => (ExperimentKind::Spectrum, a),
        Command::GeneratorConvergence(a) => (ExperimentKind::GeneratorConvergence, a),
        Command::Hydro(a) => (ExperimentKind::Hydro, a),
        Command::Qv(a) => (ExperimentKind::Qv, a),
        Command::Uniqueness(a) => (ExperimentKind::Uniqueness, a),
        Command::ConfigReference => {
            print!("{CONFIG_REFERENCE}");
            return Ok(true);
        }
    };
    if let Some(k) = args.threads {
        if k == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().context("configuring the thread pool")?;
    }
    let mut config = ExperimentConfig::load(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    if config.kind != kind {
        bail!("{} describes a `{}` experiment, not `{kind}`", args.config.display(), config.kind);
    }
    if let Some(seed) = args.seed {
        config.replicas.seed = seed;
    }
    let out = args.out.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));

    let report = run_experiment(&config)?;
    for path in report.write(&out)? {
        println!("wrote {}", path.display());
    }
    for f in &report.failures {
        eprintln!("FAIL {f}");
    }
    Ok(report.passed())
}
