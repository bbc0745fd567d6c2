#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simpro_core::config::{HyperparamsConfig, MixtureConfig, SplitConfig, TrainingConfig};
use simpro_core::engine::train;
use simpro_core::experiment::{build_data, run_seed};
use simpro_core::model::{
    adjusted_ce_labeled, finite_difference, log_sum_exp, logits, relative_error, unlabeled_loss,
    Activation, LabeledBatch, TargetKind, UnlabeledObjective,
};
use simpro_core::theory::{
    brute_force_pi, closed_form_pi, random_binary_case, random_pool, regret_and_bound,
    BruteForceOptions,
};
use simpro_core::{
    AccumulatorMode, AugmentationSpec, ClassPrior, EpochRecord, ExperimentConfig, ModelParams,
    Pattern, Variant,
};

type Verdict = Result<String, String>;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn benchmark() -> ExperimentConfig {
    ExperimentConfig::load(&repo_root().join("configs/reversed_k3.toml")).expect("benchmark config")
}

fn linf(a: &ClassPrior, b: &ClassPrior) -> f64 {
    a.probs()
        .iter()
        .zip(b.probs())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn prior_estimate() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let opts = BruteForceOptions::default();
    let instances = 60;
    let mut worst = 0.0f64;
    for i in 0..instances {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(1..=40);
        let m = rng.random_range(1..=50);
        let (labels, pseudo) = random_pool(&mut rng, k, n, m);
        let closed = closed_form_pi(k, &labels, &pseudo).map_err(|e| e.to_string())?;
        let brute = brute_force_pi(k, &labels, &pseudo, &opts).map_err(|e| e.to_string())?;
        for (c, b) in [(closed.pi_l, brute.pi_l), (closed.pi_u, brute.pi_u)] {
            let (c, b) = (c.ok_or("missing estimate")?, b.ok_or("missing estimate")?);
            let err = linf(&c, &b);
            worst = worst.max(err);
            if err > 1e-6 {
                return Err(format!("instance {i}: L∞ {err:.3e} > 1e-6"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{instances} instances, max L∞ {worst:.2e}, {secs:.2} s");
    if secs < 10.0 {
        Ok(detail)
    } else {
        Err(format!("{detail} (limit 10 s)"))
    }
}

fn random_params(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> ModelParams {
    let dims = if rng.random_bool(0.5) {
        vec![dim, k]
    } else {
        vec![dim, rng.random_range(2..=6), k]
    };
    let mut p = ModelParams::zeros(dims, Activation::Tanh).unwrap();
    for v in p.values_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    p
}

fn random_prior(rng: &mut ChaCha8Rng, k: usize) -> ClassPrior {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    ClassPrior::from_weights(&w).unwrap()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

/// Unlabeled loss with pseudo-labels and mask frozen, written out directly.
fn frozen_unlabeled(
    params: &ModelParams,
    strong: &[Vec<f64>],
    targets: &[Vec<f64>],
    mask: &[bool],
    phi: &ClassPrior,
    tau: f64,
) -> f64 {
    let shift: Vec<f64> = phi.probs().iter().map(|p| tau * p.ln()).collect();
    let total: f64 = strong
        .iter()
        .zip(targets)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((x, t), _)| {
            let z: Vec<f64> = logits(params, x).unwrap().iter().zip(&shift).map(|(a, b)| a + b).collect();
            let lse = log_sum_exp(&z);
            -t.iter().zip(&z).map(|(ti, zi)| ti * (zi - lse)).sum::<f64>()
        })
        .sum();
    total / strong.len() as f64
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let instances = 120;
    let (mut worst_l, mut worst_u) = (0.0f64, 0.0f64);
    let mut mixed_masks = 0;
    for i in 0..instances {
        let k = rng.random_range(2..=5);
        let dim = rng.random_range(1..=4);
        let p = random_params(&mut rng, dim, k);
        let phi = random_prior(&mut rng, k);
        let tau = rng.random_range(0.0..2.5);

        let n = rng.random_range(1..=8);
        let batch = LabeledBatch {
            features: random_rows(&mut rng, n, dim),
            labels: (0..n).map(|_| rng.random_range(0..k)).collect(),
        };
        let analytic = adjusted_ce_labeled(&p, &batch, &phi, tau).map_err(|e| e.to_string())?;
        let fd = finite_difference(&p, 1e-5, |q| adjusted_ce_labeled(q, &batch, &phi, tau).unwrap().loss);
        let err = relative_error(&analytic.grads, &fd);
        worst_l = worst_l.max(err);
        if !(err < 1e-5) {
            return Err(format!("instance {i}: labeled relative error {err:.3e}"));
        }

        let m = rng.random_range(1..=8);
        let weak = random_rows(&mut rng, m, dim);
        let strong: Vec<Vec<f64>> = weak
            .iter()
            .map(|x| x.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect())
            .collect();
        let pi_u = random_prior(&mut rng, k);
        let objective = UnlabeledObjective {
            phi: &phi,
            pi_u: &pi_u,
            tau,
            tau_pseudo: rng.random_range(0.0..2.0),
            threshold: rng.random_range(1.0 / k as f64..1.0),
            targets: if rng.random_bool(0.5) { TargetKind::Soft } else { TargetKind::Hard },
        };
        let report = unlabeled_loss(&p, &weak, &strong, &objective).map_err(|e| e.to_string())?;
        let targets: Vec<Vec<f64>> = match objective.targets {
            TargetKind::Soft => report.pseudo_labels.clone(),
            TargetKind::Hard => report
                .pseudo_labels
                .iter()
                .map(|q| {
                    let best = (0..k).fold(0, |b, c| if q[c] > q[b] { c } else { b });
                    (0..k).map(|c| if c == best { 1.0 } else { 0.0 }).collect()
                })
                .collect(),
        };
        if report.mask.iter().any(|&x| x) && report.mask.iter().any(|&x| !x) {
            mixed_masks += 1;
        }
        let fd = finite_difference(&p, 1e-5, |q| {
            frozen_unlabeled(q, &strong, &targets, &report.mask, &phi, tau)
        });
        let loss_check = frozen_unlabeled(&p, &strong, &targets, &report.mask, &phi, tau);
        if (loss_check - report.report.loss).abs() > 1e-12 * (1.0 + loss_check.abs()) {
            return Err(format!("instance {i}: unlabeled loss value mismatch"));
        }
        if report.mask.iter().any(|&x| x) {
            let err = relative_error(&report.report.grads, &fd);
            worst_u = worst_u.max(err);
            if !(err < 1e-5) {
                return Err(format!("instance {i}: unlabeled relative error {err:.3e}"));
            }
        } else if report.report.grads.iter().any(|&g| g != 0.0) {
            return Err(format!("instance {i}: empty mask with non-zero gradient"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{instances} instances, max rel err labeled {worst_l:.2e} unlabeled {worst_u:.2e} \
         ({mixed_masks} with partial masks), {secs:.2} s"
    );
    if secs < 30.0 {
        Ok(detail)
    } else {
        Err(format!("{detail} (limit 30 s)"))
    }
}

fn labeled_only_phi(runs: &mut Vec<Vec<EpochRecord>>) -> Verdict {
    let mut cfg = benchmark();
    cfg.hyperparams.threshold_t = 1.0;
    cfg.hyperparams.momentum_m = 0.0;
    cfg.hyperparams.epochs = 1;
    let seed = cfg.seeds[0];
    let data = build_data(&cfg, seed).map_err(|e| e.to_string())?;
    let tc = cfg.train_config(seed).map_err(|e| e.to_string())?;
    let out = train(&data, &tc).map_err(|e| e.to_string())?;
    let rec = &out.history[0];
    if rec.mask_rate != 0.0 {
        return Err(format!("mask rate {} with t = 1", rec.mask_rate));
    }
    let counts = data.labeled.class_counts().unwrap();
    let n: u64 = counts.iter().sum();
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let err = rec
        .phi
        .probs()
        .iter()
        .zip(&empirical)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    runs.push(out.history.clone());
    let detail = format!("phi {:?} vs label frequency, L∞ {err:.2e}", rec.phi.probs());
    if err <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn regret_sweep() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let cases = 200;
    let mut worst_slack = f64::INFINITY;
    let mut max_regret = 0.0f64;
    for i in 0..cases {
        let case = random_binary_case(&mut rng);
        let r = regret_and_bound(&case).map_err(|e| format!("case {i}: {e}"))?;
        if !(r.regret >= 0.0 && r.regret <= r.bound + 1e-8) {
            return Err(format!("case {i}: regret {} bound {}", r.regret, r.bound));
        }
        worst_slack = worst_slack.min(r.bound - r.regret);
        max_regret = max_regret.max(r.regret);
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{cases} cases, max regret {max_regret:.3e}, min bound slack {worst_slack:.3e}, {secs:.2} s"
    );
    if secs < 60.0 {
        Ok(detail)
    } else {
        Err(format!("{detail} (limit 60 s)"))
    }
}

struct Arm {
    top1: Vec<f64>,
    kl_pi_u: Vec<f64>,
}

impl Arm {
    fn mean_top1(&self) -> f64 {
        self.top1.iter().sum::<f64>() / self.top1.len() as f64
    }
}

/// Trains one arm of the benchmark over the configured seeds.
fn benchmark_arm(variant: Variant, e_step: bool, m_step: bool, runs: &mut Vec<Vec<EpochRecord>>) -> Result<Arm, String> {
    let mut cfg = benchmark();
    cfg.training.variant = variant;
    cfg.training.estimate_in_e_step = e_step;
    cfg.training.estimate_in_m_step = m_step;
    let mut arm = Arm {
        top1: Vec::new(),
        kl_pi_u: Vec::new(),
    };
    for &seed in &cfg.seeds {
        let (_, out) = run_seed(&cfg, seed).map_err(|e| e.to_string())?;
        let last = out.history.last().ok_or("no epochs")?;
        arm.top1.push(last.top1);
        arm.kl_pi_u.push(last.kl_pi_u.ok_or("missing KL")?);
        runs.push(out.history);
    }
    Ok(arm)
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{:.1}", 100.0 * x)).collect();
    parts.join("/")
}

fn kl_convergence(simpro: &Arm, epochs: usize) -> Verdict {
    let mean = simpro.kl_pi_u.iter().sum::<f64>() / simpro.kl_pi_u.len() as f64;
    let detail = format!(
        "mean KL(pi_u) after {epochs} epochs {mean:.2e} over {} seeds",
        simpro.kl_pi_u.len()
    );
    if epochs <= 50 && mean < 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn beats_fixmatch(simpro: &Arm, fixmatch: &Arm) -> Verdict {
    let gap = 100.0 * (simpro.mean_top1() - fixmatch.mean_top1());
    let detail = format!(
        "SimPro {:.2}% ({}) vs FixMatch {:.2}% ({}), gap {gap:.2} points",
        100.0 * simpro.mean_top1(),
        fmt_list(&simpro.top1),
        100.0 * fixmatch.mean_top1(),
        fmt_list(&fixmatch.top1)
    );
    if gap >= 5.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation_order(full: &Arm, m_only: &Arm, none: &Arm) -> Verdict {
    let (a, b, c) = (full.mean_top1(), m_only.mean_top1(), none.mean_top1());
    let (g1, g2) = (100.0 * (a - b), 100.0 * (b - c));
    let detail = format!(
        "E+M {:.2}% > M-only {:.2}% ({}) > none {:.2}%, gaps {g1:.2} / {g2:.2} points",
        100.0 * a,
        100.0 * b,
        fmt_list(&m_only.top1),
        100.0 * c
    );
    if g1 >= 1.0 && g2 >= 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_split(rng: &mut ChaCha8Rng, head: std::ops::RangeInclusive<u64>) -> SplitConfig {
    SplitConfig {
        head_count: Some(rng.random_range(head)),
        gamma: rng.random_range(1.0..30.0),
        pattern: Pattern::ALL[rng.random_range(0..Pattern::ALL.len())],
        counts: None,
    }
}

fn random_config(rng: &mut ChaCha8Rng) -> ExperimentConfig {
    let k = rng.random_range(2..=5);
    let variant = [Variant::Simpro, Variant::SimproStar, Variant::Fixmatch][rng.random_range(0..3)];
    let epochs = rng.random_range(3..=8);
    ExperimentConfig {
        seeds: vec![rng.random()],
        output_dir: PathBuf::from("unused"),
        mixture: MixtureConfig {
            k,
            dim: rng.random_range(2..=4),
            radius: rng.random_range(0.5..3.5),
            sigma: rng.random_range(0.5..1.5),
            means: None,
            sigmas: None,
        },
        labeled: random_split(rng, 20..=120),
        unlabeled: random_split(rng, 20..=400),
        test: SplitConfig {
            head_count: Some(50),
            gamma: 1.0,
            pattern: Pattern::Uniform,
            counts: None,
        },
        augmentation: AugmentationSpec {
            sigma_weak: rng.random_range(0.0..0.2),
            sigma_strong: rng.random_range(0.2..1.0),
        },
        hyperparams: HyperparamsConfig {
            tau: rng.random_range(0.0..2.5),
            threshold_t: rng.random_range(0.0..1.0),
            mu: None,
            alpha: rng.random_range(0.1..=1.0),
            batch_b: rng.random_range(8..=64),
            lr_eta: rng.random_range(0.01..0.5),
            epochs,
            momentum_m: rng.random_range(0.0..0.99),
        },
        training: TrainingConfig {
            variant,
            estimate_in_e_step: rng.random_bool(0.7),
            estimate_in_m_step: rng.random_bool(0.7),
            anchor_warmup_epochs: rng.random_range(1..=epochs),
            accumulator: if rng.random_bool(0.5) {
                AccumulatorMode::Masked
            } else {
                AccumulatorMode::All
            },
            hidden_width: [0, 4, 16][rng.random_range(0..3)],
            ..TrainingConfig::default()
        },
    }
}

fn simplex_invariants(runs: &mut Vec<Vec<EpochRecord>>) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let fuzzed = 12;
    for i in 0..fuzzed {
        let cfg = random_config(&mut rng);
        cfg.validate().map_err(|e| format!("fuzzed config {i}: {e}"))?;
        let (_, out) = run_seed(&cfg, cfg.seeds[0]).map_err(|e| format!("fuzzed config {i}: {e}"))?;
        runs.push(out.history);
    }
    let mut epochs = 0;
    for (r, history) in runs.iter().enumerate() {
        for rec in history {
            epochs += 1;
            for (name, p) in [("pi_u", &rec.pi_u), ("phi", &rec.phi)] {
                let sum: f64 = p.probs().iter().sum();
                if (sum - 1.0).abs() > 1e-9 || p.probs().iter().any(|&v| !(v >= 0.0)) {
                    return Err(format!("run {r} epoch {}: {name} = {:?}", rec.epoch, p.probs()));
                }
            }
        }
    }
    Ok(format!("{} runs ({fuzzed} fuzzed configs), {epochs} epochs checked", runs.len()))
}

fn simpro_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simpro"))
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = repo_root().join("configs/reversed_k3.toml");
    let mut bodies = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let status = simpro_bin()
            .args(["run", "--seed", "7", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("run {run} failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        bodies.push(std::fs::read(out.join("seed_7/history.csv")).map_err(|e| e.to_string())?);
    }
    if bodies[0] == bodies[1] && !bodies[0].is_empty() {
        Ok(format!("two CLI runs, seed 7: history.csv identical ({} bytes)", bodies[0].len()))
    } else {
        Err("history.csv differs between identical runs".into())
    }
}

fn verify_sentinel() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clean = simpro_bin()
        .arg("verify")
        .arg("--out")
        .arg(tmp.path())
        .output()
        .map_err(|e| e.to_string())?;
    let report: serde_json::Value = serde_json::from_slice(
        &std::fs::read(tmp.path().join("verify_report.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let sections = report["propositions"].as_array().map_or(0, Vec::len);
    let faulty = simpro_bin()
        .args(["verify", "--inject-pi-fault", "0.01"])
        .output()
        .map_err(|e| e.to_string())?;
    let detail = format!(
        "clean exit {:?} ({sections} sections), 1% fault exit {:?}",
        clean.status.code(),
        faulty.status.code()
    );
    if clean.status.code() == Some(0) && faulty.status.code() == Some(1) && sections == 3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut runs: Vec<Vec<EpochRecord>> = Vec::new();

    results.push((1, "closed-form prior equals brute-force maximizer", prior_estimate()));
    results.push((2, "analytic gradients match finite differences", gradients()));
    results.push((3, "labeled-only phi equals label frequency", labeled_only_phi(&mut runs)));
    results.push((4, "regret within bound on binary Gaussian cases", regret_sweep()));

    let epochs = benchmark().hyperparams.epochs;
    let arms = benchmark_arm(Variant::Simpro, true, true, &mut runs).and_then(|full| {
        let m_only = benchmark_arm(Variant::Simpro, false, true, &mut runs)?;
        let none = benchmark_arm(Variant::Fixmatch, false, false, &mut runs)?;
        Ok((full, m_only, none))
    });
    match &arms {
        Ok((full, m_only, none)) => {
            results.push((5, "pi_u converges to the unlabeled prior", kl_convergence(full, epochs)));
            results.push((6, "SimPro beats FixMatch by >= 5 points", beats_fixmatch(full, none)));
            results.push((7, "ablation ordering E+M > M-only > none", ablation_order(full, m_only, none)));
        }
        Err(e) => {
            for (id, name) in [
                (5, "pi_u converges to the unlabeled prior"),
                (6, "SimPro beats FixMatch by >= 5 points"),
                (7, "ablation ordering E+M > M-only > none"),
            ] {
                results.push((id, name, Err(format!("benchmark failed: {e}"))));
            }
        }
    }
    results.push((8, "pi_u and phi stay on the simplex", simplex_invariants(&mut runs)));
    results.push((9, "identical config and seed give identical history", determinism()));
    results.push((10, "verify passes clean and fails under a 1% fault", verify_sentinel()));

    println!();
    let mut failed = 0;
    for (id, name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail}");
            }
        }
    }
    println!("\n{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
