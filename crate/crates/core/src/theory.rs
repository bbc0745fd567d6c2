//! Numerical checks of the closed-form prior estimate, the Bayes-classifier
//! construction and the binary regret bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MixtureSpec;
use crate::distributions::ClassPrior;
use crate::error::{Error, Result};
use crate::model::{bayes_pseudo, log_sum_exp};
use crate::quad::adaptive_simpson;

fn check_pseudo(k: usize, pseudo: &[Vec<f64>]) -> Result<()> {
    if let Some(q) = pseudo.iter().find(|q| q.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: q.len(),
        });
    }
    Ok(())
}

fn check_labels(k: usize, labels: &[usize]) -> Result<()> {
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid("labels", format!("label {y} outside [0, {k})")));
    }
    Ok(())
}

/// The prior-dependent part of the expected complete-data log-likelihood:
/// `sum_i ln pi_l[y_i] + sum_j sum_y q_jy ln pi_u[y]`.
pub fn q_pi_terms(
    pi_l: &ClassPrior,
    pi_u: &ClassPrior,
    labels: &[usize],
    pseudo_labels: &[Vec<f64>],
) -> Result<f64> {
    let k = pi_l.k();
    if pi_u.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: pi_u.k(),
        });
    }
    check_labels(k, labels)?;
    check_pseudo(k, pseudo_labels)?;
    let (ln_l, ln_u) = (pi_l.ln()?, pi_u.ln()?);
    let labeled: f64 = labels.iter().map(|&y| ln_l[y]).sum();
    let unlabeled: f64 = pseudo_labels
        .iter()
        .map(|q| q.iter().zip(&ln_u).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok(labeled + unlabeled)
}

/// Maximizers of [`q_pi_terms`]; a side is `None` when it has no samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiEstimate {
    pub pi_l: Option<ClassPrior>,
    pub pi_u: Option<ClassPrior>,
}

fn label_counts(k: usize, labels: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; k];
    for &y in labels {
        c[y] += 1.0;
    }
    c
}

fn pseudo_sums(k: usize, pseudo: &[Vec<f64>]) -> Vec<f64> {
    let mut s = vec![0.0; k];
    for q in pseudo {
        for (a, b) in s.iter_mut().zip(q) {
            *a += b;
        }
    }
    s
}

/// `pi_l = mean of one-hot labels`, `pi_u = mean of pseudo-labels`.
pub fn closed_form_pi(k: usize, labels: &[usize], pseudo_labels: &[Vec<f64>]) -> Result<PiEstimate> {
    if labels.is_empty() && pseudo_labels.is_empty() {
        return Err(Error::invalid("samples", "no labels and no pseudo-labels"));
    }
    check_labels(k, labels)?;
    check_pseudo(k, pseudo_labels)?;
    let mean = |sums: Vec<f64>, n: usize| -> Result<Option<ClassPrior>> {
        if n == 0 {
            return Ok(None);
        }
        ClassPrior::from_weights(&sums.iter().map(|s| s / n as f64).collect::<Vec<_>>()).map(Some)
    };
    Ok(PiEstimate {
        pi_l: mean(label_counts(k, labels), labels.len())?,
        pi_u: mean(pseudo_sums(k, pseudo_labels), pseudo_labels.len())?,
    })
}

/// Overall class frequency `(sum_i y_i + sum_j q_j) / (N + M)`.
pub fn overall_frequency(k: usize, labels: &[usize], pseudo_labels: &[Vec<f64>]) -> Result<ClassPrior> {
    check_labels(k, labels)?;
    check_pseudo(k, pseudo_labels)?;
    let total = (labels.len() + pseudo_labels.len()) as f64;
    let sums: Vec<f64> = label_counts(k, labels)
        .iter()
        .zip(pseudo_sums(k, pseudo_labels))
        .map(|(a, b)| (a + b) / total)
        .collect();
    ClassPrior::from_weights(&sums)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BruteForceOptions {
    /// Grid points per simplex axis in the coarse search.
    pub grid_points: usize,
    /// Stop once an ascent step moves no coordinate by more than this.
    pub step_tol: f64,
    pub max_iter: usize,
}

impl Default for BruteForceOptions {
    fn default() -> Self {
        Self {
            grid_points: 21,
            step_tol: 1e-14,
            max_iter: 200_000,
        }
    }
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `sum_y w_y ln p_y` with `0 ln 0 = 0`.
fn weighted_log_lik(w: &[f64], p: &[f64]) -> f64 {
    w.iter()
        .zip(p)
        .map(|(&wi, &pi)| {
            if wi == 0.0 {
                0.0
            } else if pi <= 0.0 {
                f64::NEG_INFINITY
            } else {
                wi * pi.ln()
            }
        })
        .sum()
}

fn for_each_composition(total: usize, parts: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(rem: usize, slot: usize, buf: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if slot + 1 == buf.len() {
            buf[slot] = rem;
            f(buf);
            return;
        }
        for v in 0..=rem {
            buf[slot] = v;
            rec(rem - v, slot + 1, buf, f);
        }
    }
    let mut buf = vec![0; parts];
    rec(total, 0, &mut buf, f);
}

/// Maximizes `sum_y w_y ln p_y` over the simplex without using the closed form:
/// a coarse grid search followed by projected gradient ascent with backtracking.
fn maximize_on_simplex(weights: &[f64], opts: &BruteForceOptions) -> Vec<f64> {
    let k = weights.len();
    let total: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
    let divisions = opts.grid_points.max(2) - 1;

    let mut best = vec![1.0 / k as f64; k];
    let mut best_val = weighted_log_lik(&w, &best);
    for_each_composition(divisions, k, &mut |c| {
        let p: Vec<f64> = c.iter().map(|&v| v as f64 / divisions as f64).collect();
        let val = weighted_log_lik(&w, &p);
        if val > best_val {
            best_val = val;
            best = p;
        }
    });

    let mut p = best;
    let mut val = best_val;
    let mut step = 1.0;
    for _ in 0..opts.max_iter {
        let grad: Vec<f64> = w
            .iter()
            .zip(&p)
            .map(|(&wi, &pi)| if wi == 0.0 { 0.0 } else { wi / pi })
            .collect();
        let mut moved = 0.0;
        let mut accepted = false;
        step *= 2.0;
        while step > 1e-20 {
            let cand = project_to_simplex(
                &p.iter().zip(&grad).map(|(a, g)| a + step * g).collect::<Vec<_>>(),
            );
            let cand_val = weighted_log_lik(&w, &cand);
            let ascent: f64 = grad.iter().zip(&cand).zip(&p).map(|((g, c), a)| g * (c - a)).sum();
            if cand_val.is_finite() && cand_val >= val + 1e-4 * ascent {
                moved = cand.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                accepted = cand_val >= val;
                if accepted {
                    p = cand;
                    val = cand_val;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || moved < opts.step_tol {
            break;
        }
    }
    p
}

/// Direct numerical maximization of [`q_pi_terms`] over both simplices.
pub fn brute_force_pi(
    k: usize,
    labels: &[usize],
    pseudo_labels: &[Vec<f64>],
    opts: &BruteForceOptions,
) -> Result<PiEstimate> {
    if labels.is_empty() && pseudo_labels.is_empty() {
        return Err(Error::invalid("samples", "no labels and no pseudo-labels"));
    }
    check_labels(k, labels)?;
    check_pseudo(k, pseudo_labels)?;
    let solve = |w: Vec<f64>, n: usize| -> Result<Option<ClassPrior>> {
        if n == 0 || w.iter().sum::<f64>() <= 0.0 {
            return Ok(None);
        }
        ClassPrior::from_weights(&maximize_on_simplex(&w, opts)).map(Some)
    };
    Ok(PiEstimate {
        pi_l: solve(label_counts(k, labels), labels.len())?,
        pi_u: solve(pseudo_sums(k, pseudo_labels), pseudo_labels.len())?,
    })
}

/// Posterior from per-class log-likelihoods and a prior; zero-prior classes get zero mass.
pub fn posterior_from_log_likelihoods(prior: &ClassPrior, loglik: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = prior
        .probs()
        .iter()
        .zip(loglik)
        .map(|(p, l)| if *p > 0.0 { p.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    let lse = log_sum_exp(&z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// Exact Bayes posterior `P(y | x)` under the mixture's class conditionals and `prior`.
pub fn exact_posterior(spec: &MixtureSpec, prior: &ClassPrior, x: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    if prior.k() != spec.k {
        return Err(Error::DimensionMismatch {
            expected: spec.k,
            actual: prior.k(),
        });
    }
    if x.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            actual: x.len(),
        });
    }
    let loglik: Vec<f64> = (0..spec.k).map(|c| spec.log_density(c, x)).collect();
    Ok(posterior_from_log_likelihoods(prior, &loglik))
}

/// Binary problem with 1-D Gaussian class conditionals of equal width.
/// Priors are ordered `[P(+1), P(-1)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryGaussianCase {
    pub mean_pos: f64,
    pub mean_neg: f64,
    pub sigma: f64,
    pub phi_star: ClassPrior,
    pub phi_hat: ClassPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// Excess test error of the `phi_hat` decision rule over the Bayes rule.
    pub regret: f64,
    /// `|phi_hat - phi_star| / (2 phi_star(+1) phi_star(-1))`.
    pub bound: f64,
    /// Decision threshold on the likelihood ratio.
    pub lambda: f64,
    pub error_hat: f64,
    pub error_opt: f64,
}

const REGRET_TOL: f64 = 1e-9;
const SUPPORT_SIGMAS: f64 = 8.0;

fn normal_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

impl BinaryGaussianCase {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        if !self.mean_pos.is_finite() || !self.mean_neg.is_finite() {
            return Err(Error::invalid("means", "must be finite"));
        }
        for (name, p) in [("phi_star", &self.phi_star), ("phi_hat", &self.phi_hat)] {
            if p.k() != 2 {
                return Err(Error::invalid(name, "binary case needs two classes"));
            }
            if p.probs().iter().any(|&v| v <= 0.0) {
                return Err(Error::invalid(name, "entries must be strictly positive"));
            }
        }
        Ok(())
    }

    /// `ln l(x) = ln P(+1|x) - ln P(-1|x)` under the uniform test prior.
    fn log_ratio(&self, x: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        ((x - self.mean_neg).powi(2) - (x - self.mean_pos).powi(2)) / (2.0 * s2)
    }

    fn joint(&self, positive: bool, x: f64) -> f64 {
        let mean = if positive { self.mean_pos } else { self.mean_neg };
        0.5 * normal_pdf(x, mean, self.sigma)
    }

    pub fn lambda(&self) -> f64 {
        let (h, s) = (self.phi_hat.probs(), self.phi_star.probs());
        h[0] * s[1] / (h[1] * s[0])
    }

    pub fn bound(&self) -> f64 {
        let (h, s) = (self.phi_hat.probs(), self.phi_star.probs());
        (h[1] - s[1]).abs() / (2.0 * s[0] * s[1])
    }

    fn support(&self) -> (f64, f64) {
        let lo = self.mean_pos.min(self.mean_neg) - SUPPORT_SIGMAS * self.sigma;
        let hi = self.mean_pos.max(self.mean_neg) + SUPPORT_SIGMAS * self.sigma;
        (lo, hi)
    }

    /// Points in `(lo, hi)` where `ln l(x)` crosses `ln threshold`, found by scan and bisection.
    fn crossings(&self, threshold: f64, lo: f64, hi: f64) -> Vec<f64> {
        const SCAN: usize = 4096;
        let target = threshold.ln();
        let g = |x: f64| self.log_ratio(x) - target;
        let mut out = Vec::new();
        let h = (hi - lo) / SCAN as f64;
        let mut a = lo;
        let mut ga = g(a);
        for i in 1..=SCAN {
            let b = lo + i as f64 * h;
            let gb = g(b);
            if ga == 0.0 {
                out.push(a);
            } else if ga.signum() != gb.signum() && gb != 0.0 {
                let (mut l, mut r, mut gl) = (a, b, ga);
                for _ in 0..200 {
                    let m = 0.5 * (l + r);
                    let gm = g(m);
                    if gm == 0.0 || r - l < 1e-15 * (1.0 + m.abs()) {
                        l = m;
                        r = m;
                        break;
                    }
                    if gm.signum() == gl.signum() {
                        l = m;
                        gl = gm;
                    } else {
                        r = m;
                    }
                }
                out.push(0.5 * (l + r));
            }
            a = b;
            ga = gb;
        }
        out
    }
}

/// Decision error of the rule "predict +1 iff `l(x) >= threshold`" on pieces with a fixed decision.
fn piecewise_error(
    case: &BinaryGaussianCase,
    threshold: f64,
    breaks: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let ln_t = threshold.ln();
    breaks
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let predict_pos = case.log_ratio(mid) >= ln_t;
            adaptive_simpson(|x| case.joint(!predict_pos, x), w[0], w[1], tol)
        })
        .collect()
}

/// Excess balanced-test error from deciding with `phi_hat` instead of `phi_star`,
/// by adaptive quadrature of the two error integrals, together with the bound.
pub fn regret_and_bound(case: &BinaryGaussianCase) -> Result<RegretReport> {
    case.validate()?;
    let lambda = case.lambda();
    let (lo, hi) = case.support();
    let mut breaks = vec![lo, hi];
    breaks.extend(case.crossings(lambda, lo, hi));
    breaks.extend(case.crossings(1.0, lo, hi));
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    let tol = REGRET_TOL / breaks.len() as f64;

    let hat = piecewise_error(case, lambda, &breaks, tol)?;
    let opt = piecewise_error(case, 1.0, &breaks, tol)?;
    let error_hat: f64 = hat.iter().sum();
    let error_opt: f64 = opt.iter().sum();

    // On pieces where both rules agree the integrals are identical; elsewhere
    // integrate |P(+1, x) - P(-1, x)| directly.
    let mut regret = 0.0;
    for (i, w) in breaks.windows(2).enumerate() {
        if hat[i] == opt[i] {
            continue;
        }
        regret += adaptive_simpson(
            |x| (case.joint(true, x) - case.joint(false, x)).abs(),
            w[0],
            w[1],
            tol,
        )?;
    }
    Ok(RegretReport {
        regret,
        bound: case.bound(),
        lambda,
        error_hat,
        error_opt,
    })
}

// ---------------------------------------------------------------------------
// Verification battery
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub prior_instances: usize,
    pub regret_cases: usize,
    /// Relative error injected into the closed-form estimate (mutation testing).
    pub pi_perturbation: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 2024,
            prior_instances: 50,
            regret_cases: 200,
            pi_perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub name: String,
    pub description: String,
    pub passed: bool,
    pub checks: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub failures: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub options: VerifyOptions,
    pub propositions: Vec<PropositionReport>,
}

const MAX_REPORTED_FAILURES: usize = 5;

struct Tally {
    checks: usize,
    max_error: f64,
    failures: Vec<serde_json::Value>,
    failed: bool,
}

impl Tally {
    fn new() -> Self {
        Self {
            checks: 0,
            max_error: 0.0,
            failures: Vec::new(),
            failed: false,
        }
    }

    fn record(&mut self, error: f64, ok: bool, case: impl FnOnce() -> serde_json::Value) {
        self.checks += 1;
        if error.is_finite() {
            self.max_error = self.max_error.max(error);
        }
        if !ok {
            self.failed = true;
            if self.failures.len() < MAX_REPORTED_FAILURES {
                self.failures.push(case());
            }
        }
    }

    fn finish(self, name: &str, description: &str, tolerance: f64) -> PropositionReport {
        PropositionReport {
            name: name.into(),
            description: description.into(),
            passed: !self.failed,
            checks: self.checks,
            max_error: self.max_error,
            tolerance,
            failures: self.failures,
        }
    }
}

fn perturb(p: &ClassPrior, rel: f64) -> ClassPrior {
    if rel == 0.0 {
        return p.clone();
    }
    let mut w = p.probs().to_vec();
    w[0] *= 1.0 + rel;
    ClassPrior::from_weights(&w).unwrap_or_else(|_| p.clone())
}

fn linf(a: &ClassPrior, b: &ClassPrior) -> f64 {
    a.probs()
        .iter()
        .zip(b.probs())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Random pool of hard labels and soft pseudo-labels.
pub fn random_pool(rng: &mut impl Rng, k: usize, n: usize, m: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    let pseudo = (0..m)
        .map(|_| {
            let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(2)).collect();
            let s: f64 = w.iter().sum::<f64>().max(1e-300);
            w.into_iter().map(|v| v / s).collect()
        })
        .collect();
    (labels, pseudo)
}

pub const PRIOR_TOL: f64 = 1e-6;
pub const IDENTITY_TOL: f64 = 1e-12;
pub const LABELED_ONLY_TOL: f64 = 1e-9;
pub const BOUND_SLACK: f64 = 1e-8;

fn check_prior_estimate(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> PropositionReport {
    let mut tally = Tally::new();
    let brute = BruteForceOptions::default();
    for instance in 0..opts.prior_instances {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(1..=30);
        let m = rng.random_range(1..=50);
        let (labels, pseudo) = random_pool(rng, k, n, m);
        let result = closed_form_pi(k, &labels, &pseudo)
            .and_then(|c| Ok((c, brute_force_pi(k, &labels, &pseudo, &brute)?)));
        let (closed, searched) = match result {
            Ok(v) => v,
            Err(e) => {
                tally.record(f64::INFINITY, false, || {
                    serde_json::json!({"instance": instance, "error": e.to_string()})
                });
                continue;
            }
        };
        let pairs = [(closed.pi_l, searched.pi_l), (closed.pi_u, searched.pi_u)];
        for (side, (c, b)) in ["pi_l", "pi_u"].into_iter().zip(pairs) {
            let (Some(c), Some(b)) = (c, b) else { continue };
            let c = perturb(&c, opts.pi_perturbation);
            let err = linf(&c, &b);
            tally.record(err, err <= PRIOR_TOL, || {
                serde_json::json!({
                    "instance": instance, "side": side, "k": k,
                    "labels": labels, "pseudo_labels": pseudo,
                    "closed_form": c.probs(), "brute_force": b.probs(), "linf": err,
                })
            });
        }
    }
    tally.finish(
        "closed_form_prior",
        "closed-form class priors maximize the prior terms of the Q-function (brute-force simplex search)",
        PRIOR_TOL,
    )
}

fn check_bayes_classifier(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> PropositionReport {
    let mut tally = Tally::new();
    for instance in 0..opts.prior_instances {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(1..=40);
        let m = rng.random_range(1..=60);
        let (labels, pseudo) = random_pool(rng, k, n, m);

        // Overall frequency equals the sample-weighted blend of the two closed-form priors.
        let direct = overall_frequency(k, &labels, &pseudo);
        let blended = closed_form_pi(k, &labels, &pseudo).map(|c| {
            let (pl, pu) = (
                perturb(&c.pi_l.unwrap(), opts.pi_perturbation),
                perturb(&c.pi_u.unwrap(), opts.pi_perturbation),
            );
            let (wn, wm) = (n as f64 / (n + m) as f64, m as f64 / (n + m) as f64);
            pl.probs()
                .iter()
                .zip(pu.probs())
                .map(|(a, b)| wn * a + wm * b)
                .collect::<Vec<f64>>()
        });
        match (direct, blended) {
            (Ok(d), Ok(b)) => {
                let err = d
                    .probs()
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                tally.record(err, err <= IDENTITY_TOL, || {
                    serde_json::json!({"instance": instance, "check": "overall_frequency_blend",
                        "direct": d.probs(), "blended": b, "linf": err})
                });
            }
            (d, b) => tally.record(f64::INFINITY, false, || {
                serde_json::json!({"instance": instance, "error": format!("{:?} / {:?}", d.err(), b.err())})
            }),
        }

        // With no accepted pseudo-labels the overall frequency is the labeled frequency.
        let labeled_only = overall_frequency(k, &labels, &[]);
        let empirical = closed_form_pi(k, &labels, &[]).map(|c| c.pi_l.unwrap());
        if let (Ok(a), Ok(b)) = (labeled_only, empirical) {
            let b = perturb(&b, opts.pi_perturbation);
            let err = linf(&a, &b);
            tally.record(err, err <= LABELED_ONLY_TOL, || {
                serde_json::json!({"instance": instance, "check": "labeled_only",
                    "overall": a.probs(), "empirical": b.probs()})
            });
        }

        // Prior-adjusted softmax over true log class-conditionals is the exact posterior.
        let means: Vec<Vec<f64>> = (0..k)
            .map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
            .collect();
        let sigmas: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        let spec = MixtureSpec::new(means, sigmas).expect("valid random mixture");
        let prior = ClassPrior::from_weights(&(0..k).map(|_| rng.random_range(0.05..1.0)).collect::<Vec<_>>())
            .expect("positive weights");
        let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let loglik: Vec<f64> = (0..k).map(|c| spec.log_density(c, &x)).collect();
        match (bayes_pseudo(&loglik, &prior, 1.0), exact_posterior(&spec, &prior, &x)) {
            (Ok(a), Ok(b)) => {
                let err = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                tally.record(err, err <= IDENTITY_TOL, || {
                    serde_json::json!({"instance": instance, "check": "bayes_posterior",
                        "adjusted_softmax": a, "exact": b})
                });
            }
            _ => tally.record(f64::INFINITY, false, || serde_json::json!({"instance": instance})),
        }
    }
    tally.finish(
        "bayes_classifier",
        "overall class frequency blends labeled and unlabeled priors; labeled-only case reduces to label frequency; prior-adjusted softmax equals the Bayes posterior",
        IDENTITY_TOL,
    )
}

/// Random binary case used by the regret sweep.
pub fn random_binary_case(rng: &mut impl Rng) -> BinaryGaussianCase {
    let p_star = rng.random_range(0.05..0.95);
    let p_hat = rng.random_range(0.05..0.95);
    BinaryGaussianCase {
        mean_pos: rng.random_range(-3.0..3.0),
        mean_neg: rng.random_range(-3.0..3.0),
        sigma: rng.random_range(0.3..3.0),
        phi_star: ClassPrior::from_weights(&[p_star, 1.0 - p_star]).unwrap(),
        phi_hat: ClassPrior::from_weights(&[p_hat, 1.0 - p_hat]).unwrap(),
    }
}

fn check_regret(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> PropositionReport {
    let mut tally = Tally::new();
    for instance in 0..opts.regret_cases {
        let case = random_binary_case(rng);
        match regret_and_bound(&case) {
            Ok(r) => {
                let excess = (r.regret - r.bound).max(-r.regret);
                let ok = r.regret >= 0.0 && r.regret <= r.bound + BOUND_SLACK;
                tally.record(excess.max(0.0), ok, || {
                    serde_json::json!({"instance": instance, "case": case, "report": r})
                });
            }
            Err(e) => tally.record(f64::INFINITY, false, || {
                serde_json::json!({"instance": instance, "case": case, "error": e.to_string()})
            }),
        }
    }
    tally.finish(
        "regret_bound",
        "excess balanced-test error of the estimated-prior decision rule stays within |phi_hat - phi*| / (2 phi*(+1) phi*(-1))",
        BOUND_SLACK,
    )
}

/// Runs the full oracle battery.
pub fn run_verification(opts: &VerifyOptions) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let propositions = vec![
        check_prior_estimate(opts, &mut rng),
        check_bayes_classifier(opts, &mut rng),
        check_regret(opts, &mut rng),
    ];
    VerifyReport {
        passed: propositions.iter().all(|p| p.passed),
        options: *opts,
        propositions,
    }
}
