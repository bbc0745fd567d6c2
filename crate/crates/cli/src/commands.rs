use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use simpro_core::data::{write_csv, write_truth_csv};
use simpro_core::experiment::{build_data, run_seed};
use simpro_core::metrics::{mean_std, write_history};
use simpro_core::theory::{run_verification, VerifyOptions};
use simpro_core::{ExperimentConfig, Variant};

/// How a command failed; selects the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable or invalid configuration, bad arguments.
    Config(String),
    /// Anything that went wrong after validation.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
}

pub const SWEEP_AXES: [&str; 5] = ["gamma_u", "threshold_t", "tau", "momentum_m", "alpha"];

fn config_error(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

/// Loads the config and applies command-line overrides, then revalidates.
fn load_config(opts: &RunOptions) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&opts.config).map_err(config_error)?;
    if let Some(seed) = opts.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(variant) = opts.variant {
        cfg.training.variant = variant;
    }
    if let Some(out) = &opts.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize)]
struct SeedResult {
    seed: u64,
    top1: f64,
    kl_pi_u: Option<f64>,
    kl_phi: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct Stat {
    mean: f64,
    std: f64,
}

impl Stat {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(xs);
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary {
    seeds: Vec<SeedResult>,
    top1: Stat,
    kl_pi_u: Option<Stat>,
    kl_phi: Option<Stat>,
    config: serde_json::Value,
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Trains every configured seed into `cfg.output_dir` and writes the summary.
fn execute(cfg: &ExperimentConfig) -> anyhow::Result<RunSummary> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (_, outcome) = run_seed(cfg, seed).with_context(|| format!("training seed {seed}"))?;
        let dir = out.join(format!("seed_{seed}"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let echo = cfg.resolved_json(seed)?;
        write_history(
            &outcome.history,
            &dir.join("history.csv"),
            &dir.join("history.json"),
            &echo,
        )?;
        outcome.params.save_json(&dir.join("model.json"))?;
        let last = outcome.history.last().context("training produced no epochs")?;
        println!(
            "seed {seed}: top1 {:.4} kl_pi_u {} kl_phi {}",
            last.top1,
            last.kl_pi_u.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into()),
            last.kl_phi.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into()),
        );
        results.push(SeedResult {
            seed,
            top1: last.top1,
            kl_pi_u: last.kl_pi_u,
            kl_phi: last.kl_phi,
        });
    }

    let collect = |f: fn(&SeedResult) -> Option<f64>| -> Vec<f64> {
        results.iter().filter_map(f).collect()
    };
    let top1: Vec<f64> = results.iter().map(|r| r.top1).collect();
    let summary = RunSummary {
        top1: Stat::of(&top1).expect("at least one seed"),
        kl_pi_u: Stat::of(&collect(|r| r.kl_pi_u)),
        kl_phi: Stat::of(&collect(|r| r.kl_phi)),
        config: serde_json::json!({
            "experiment": cfg,
            "resolved": cfg.resolved_json(cfg.seeds[0])?["resolved"].clone(),
        }),
        seeds: results,
    };

    let mut csv = String::from("seed,top1,kl_pi_u,kl_phi\n");
    for r in &summary.seeds {
        writeln!(
            csv,
            "{},{},{},{}",
            r.seed,
            r.top1,
            opt_field(r.kl_pi_u),
            opt_field(r.kl_phi)
        )?;
    }
    let csv_path = out.join("summary.csv");
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    let json_path = out.join("summary.json");
    fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;
    println!(
        "top1 {:.4} ± {:.4} over {} seed(s); summary in {}",
        summary.top1.mean,
        summary.top1.std,
        summary.seeds.len(),
        json_path.display()
    );
    Ok(summary)
}

pub fn run(opts: &RunOptions) -> CmdResult {
    let cfg = load_config(opts)?;
    execute(&cfg)?;
    Ok(())
}

fn apply_axis(cfg: &mut ExperimentConfig, axis: &str, value: f64) -> Result<(), Failure> {
    match axis {
        "gamma_u" => cfg.unlabeled.gamma = value,
        "threshold_t" => cfg.hyperparams.threshold_t = value,
        "tau" => cfg.hyperparams.tau = value,
        "momentum_m" => cfg.hyperparams.momentum_m = value,
        "alpha" => cfg.hyperparams.alpha = value,
        other => {
            return Err(Failure::Config(format!(
                "unknown sweep axis {other:?}; expected one of {}",
                SWEEP_AXES.join(", ")
            )))
        }
    }
    Ok(())
}

pub fn sweep(opts: &RunOptions, axis: &str, values: &[String]) -> CmdResult {
    let base = load_config(opts)?;
    if !SWEEP_AXES.contains(&axis) {
        apply_axis(&mut base.clone(), axis, 0.0)?;
    }
    let values: Vec<&str> = values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Failure::Config("sweep needs at least one value".into()));
    }

    // Validate every point before training any of them.
    let mut points = Vec::with_capacity(values.len());
    for raw in values {
        let value: f64 = raw
            .parse()
            .map_err(|_| Failure::Config(format!("sweep value {raw:?} is not a number")))?;
        let mut cfg = base.clone();
        apply_axis(&mut cfg, axis, value)?;
        cfg.output_dir = base.output_dir.join(format!("{axis}_{raw}"));
        cfg.validate()
            .map_err(|e| Failure::Config(format!("{axis} = {raw}: {e}")))?;
        points.push((raw.to_string(), cfg));
    }

    fs::create_dir_all(&base.output_dir)
        .with_context(|| format!("creating {}", base.output_dir.display()))?;
    let mut csv = String::from("axis_value,top1_mean,top1_std,kl_final\n");
    for (raw, cfg) in &points {
        println!("{axis} = {raw}");
        let summary = execute(cfg)?;
        let kl = summary.kl_pi_u.as_ref().map(|s| s.mean);
        writeln!(
            csv,
            "{raw},{},{},{}",
            summary.top1.mean,
            summary.top1.std,
            opt_field(kl)
        )
        .map_err(anyhow::Error::from)?;
    }
    let path = base.output_dir.join(format!("sweep_{axis}.csv"));
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("sweep table in {}", path.display());
    Ok(())
}

pub fn verify(out: Option<&Path>, seed: u64, inject_pi_fault: f64) -> CmdResult {
    if !inject_pi_fault.is_finite() || inject_pi_fault <= -1.0 {
        return Err(Failure::Config("--inject-pi-fault must be > -1".into()));
    }
    let opts = VerifyOptions {
        seed,
        pi_perturbation: inject_pi_fault,
        ..VerifyOptions::default()
    };
    let report = run_verification(&opts);
    for p in &report.propositions {
        println!(
            "{} {}: {} checks, max error {:.3e} (tolerance {:.0e})",
            if p.passed { "PASS" } else { "FAIL" },
            p.name,
            p.checks,
            p.max_error,
            p.tolerance
        );
    }
    let json = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n";
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("verify_report.json");
        fs::write(&path, &json).with_context(|| format!("writing {}", path.display()))?;
        println!("report in {}", path.display());
    }
    if report.passed {
        Ok(())
    } else {
        for p in report.propositions.iter().filter(|p| !p.passed) {
            let cases = serde_json::to_string(&p.failures).map_err(anyhow::Error::from)?;
            eprintln!("{} failing cases: {cases}", p.name);
        }
        Err(Failure::Runtime(anyhow::anyhow!("verification failed")))
    }
}

pub fn gen_data(config: &Path, out: Option<&Path>, seed: Option<u64>) -> CmdResult {
    let cfg = ExperimentConfig::load(config).map_err(config_error)?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    let data = build_data(&cfg, seed).context("synthesizing splits")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv(&data.labeled, &dir.join("labeled.csv")).map_err(anyhow::Error::from)?;
    write_csv(&data.unlabeled, &dir.join("unlabeled.csv")).map_err(anyhow::Error::from)?;
    write_csv(&data.test, &dir.join("test.csv")).map_err(anyhow::Error::from)?;
    if let Some(truth) = &data.unlabeled_truth {
        write_truth_csv(truth, &dir.join("unlabeled_truth.csv")).map_err(anyhow::Error::from)?;
    }
    println!(
        "seed {seed}: {} labeled, {} unlabeled, {} test rows in {}",
        data.labeled.len(),
        data.unlabeled.len(),
        data.test.len(),
        dir.display()
    );
    Ok(())
}
