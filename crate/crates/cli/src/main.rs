//! `loos`: simulate lattice GMRF data, fit it by maximum likelihood or
//! leave-one-out scoring, and run the simulation studies.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use loos_core::experiments::OutlierPlan;
use loos_core::gmrf::ModelKind;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "loos", version, about = "Leave-one-out scoring-rule estimation for Gaussian Markov random fields")]
struct Cli {
    /// Worker threads for studies and Godambe runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate replicated observations of a lattice GMRF.
    Simulate(SimulateArgs),
    /// Fit a dataset by maximum likelihood or LOOS.
    Fit(FitArgs),
    /// Run a replicated estimation or predictive study.
    Study(StudyArgs),
    /// Tabulate Godambe asymptotic standard deviations.
    Godambe(GodambeArgs),
    /// Time objective evaluations and fits across lattice sizes.
    Benchmark(BenchmarkArgs),
    /// Print the build identifier written to manifests.
    Version,
}

/// Model and parameter flags shared by `simulate` and `study`.
#[derive(Debug, Args)]
struct ModelArgs {
    /// TOML file with study keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// direct, latent or nonstationary.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    sigma_eps: Option<f64>,
    /// Natural parameters `tau,kappa[,sigma_eps]`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "log_theta")]
    theta: Option<Vec<f64>>,
    /// Log parameters `log_tau,log_kappa[,log_sigma_eps]`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    log_theta: Option<Vec<f64>>,
    /// Mean coefficients: intercept, then one per covariate.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta: Option<Vec<f64>>,
    /// Attach the two synthetic covariates to the mean.
    #[arg(long)]
    covariates: bool,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Observation nodes of latent models.
    #[arg(long)]
    n_obs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Replicates to draw.
    #[arg(long)]
    reps: Option<usize>,
    /// Contamination plan, e.g. `k=10,K=5`.
    #[arg(long)]
    outliers: Option<OutlierPlan>,
    /// Output directory for dataset.json, dataset.csv and manifest.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Dataset file written by `simulate`.
    #[arg(long)]
    data: PathBuf,
    /// ml | loos:log | loos:crps | loos:scrps | loos:root | loos:rcrps:<c>
    #[arg(long)]
    method: String,
    /// Initial log parameters; defaults to the stored truth shifted by 0.2.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    init: Option<Vec<f64>>,
    #[arg(long)]
    xtol: Option<f64>,
    #[arg(long)]
    ftol: Option<f64>,
    #[arg(long)]
    max_evals: Option<usize>,
    /// Report the objective negatively oriented (lower is better).
    #[arg(long)]
    negate: bool,
    /// Directory for fit.txt and fit.csv; the report always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// fig2, fig4, fig5, predictive or covariates.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Contamination plans; repeat the flag for several (`--outliers k=0`).
    #[arg(long)]
    outliers: Vec<OutlierPlan>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Held-out nodes of the predictive study.
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    init_offset: Option<f64>,
    #[arg(long, default_value = "study-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GodambeArgs {
    /// TOML file with Godambe table keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// A point `tau,kappa`; repeat for several rows.
    #[arg(long, allow_hyphen_values = true)]
    theta: Vec<String>,
    /// A point `log_tau,log_kappa`; repeat for several rows.
    #[arg(long, allow_hyphen_values = true)]
    log_theta: Vec<String>,
    #[arg(long)]
    nsims: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    fd_step: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "godambe-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// TOML file with benchmark keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated node counts.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    n_timing: Option<usize>,
    /// Largest lattice on which full fits are timed.
    #[arg(long)]
    fit_max_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "benchmark-out")]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    if threads == Some(0) {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::with_pool(threads, || commands::fit(a)),
        Command::Study(a) => commands::with_pool(threads, || commands::study(a)),
        Command::Godambe(a) => commands::with_pool(threads, || commands::godambe(a)),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Version => {
            println!("{}", loos_core::experiments::VERSION);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("loos: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
