use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

use commands::Failure;

/// Long-tailed semi-supervised EM experiments on synthetic Gaussian mixtures.
#[derive(Debug, Parser)]
#[command(name = "simpro", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Simpro,
    SimproStar,
    Fixmatch,
}

impl From<VariantArg> for simpro_core::Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Simpro => Self::Simpro,
            VariantArg::SimproStar => Self::SimproStar,
            VariantArg::Fixmatch => Self::Fixmatch,
        }
    }
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `training.variant`.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train once per seed and write histories plus a mean/std summary.
    Run(RunArgs),
    /// Repeat `run` over values of one hyperparameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// One of gamma_u, threshold_t, tau, momentum_m, alpha.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Check the estimator, classifier and regret-bound oracles.
    Verify {
        /// Directory for the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = simpro_core::theory::VerifyOptions::default().seed)]
        seed: u64,
        /// Scale the closed-form prior estimate by (1 + x) before comparing.
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_pi_fault: f64,
    },
    /// Write the labeled, unlabeled and test splits as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed to generate; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::run(&args.into()),
        Command::Sweep { run, axis, values } => commands::sweep(&run.into(), &axis, &values),
        Command::Verify {
            out,
            seed,
            inject_pi_fault,
        } => commands::verify(out.as_deref(), seed, inject_pi_fault),
        Command::GenData { config, out, seed } => commands::gen_data(&config, out.as_deref(), seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

impl From<RunArgs> for commands::RunOptions {
    fn from(a: RunArgs) -> Self {
        Self {
            config: a.config,
            out: a.out,
            seed: a.seed,
            variant: a.variant.map(Into::into),
        }
    }
}
