//! Feed-forward softmax classifier with hand-derived gradients and the
//! prior-adjusted losses used by the training loop.
//!
//! Parameters live in one flat vector. Layer `l` occupies a weight block of
//! `out * in` values (row-major, one row per output unit) followed by `out`
//! biases. Gradients use the same layout, so an SGD step is an axpy over the
//! flat buffer and finite differences can perturb single coordinates.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{argmax, ClassPrior};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layer_dims: Vec<usize>,
    activation: Activation,
    values: Vec<f64>,
}

fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl ModelParams {
    /// All-zero parameters. `layer_dims` runs from the input dimension to `K`.
    pub fn zeros(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::invalid("layer_dims", "need at least input and output sizes"));
        }
        if layer_dims.contains(&0) {
            return Err(Error::invalid("layer_dims", "layer sizes must be positive"));
        }
        if *layer_dims.last().unwrap() < 2 {
            return Err(Error::invalid("layer_dims", "output layer needs K >= 2 units"));
        }
        let n = param_count(&layer_dims);
        Ok(Self {
            layer_dims,
            activation,
            values: vec![0.0; n],
        })
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(layer_dims: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(layer_dims, activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in p.layer_dims.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p.values[offset..offset + fan_in * fan_out] {
                *v = rng.random_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(p)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn k(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// `(weight offset, bias offset, fan_in, fan_out)` for layer `l`.
    fn layer_span(&self, l: usize) -> (usize, usize, usize, usize) {
        let offset = param_count(&self.layer_dims[..=l]);
        let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
        (offset, offset + fan_in * fan_out, fan_in, fan_out)
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let (w, b, _, _) = self.layer_span(l);
        &self.values[w..b]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let (_, b, _, out) = self.layer_span(l);
        &self.values[b..b + out]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping every layer's output; the last entry is the logits.
    fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let (w, b, fan_in, fan_out) = self.layer_span(l);
            let input = &acts[l];
            let last = l + 1 == self.n_layers();
            let out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &self.values[w + o * fan_in..w + (o + 1) * fan_in];
                    let z = self.values[b + o]
                        + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    if last {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d logits`.
    fn backward(&self, acts: &[Vec<f64>], dlogits: &[f64], grads: &mut [f64]) {
        let mut delta = dlogits.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (w, b, fan_in, fan_out) = self.layer_span(l);
            let input = &acts[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grads[b + o] += d;
                let g = &mut grads[w + o * fan_in..w + (o + 1) * fan_in];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; fan_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &self.values[w + o * fan_in..w + (o + 1) * fan_in];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += d * wi;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= self.activation.derivative_from_output(*a);
                }
                delta = prev;
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let n = self.n_layers();
        Checkpoint {
            layer_dims: self.layer_dims.clone(),
            activation: self.activation,
            weights: (0..n).map(|l| self.weights(l).to_vec()).collect(),
            biases: (0..n).map(|l| self.biases(l).to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut p = Self::zeros(ckpt.layer_dims.clone(), ckpt.activation)?;
        let n = p.n_layers();
        if ckpt.weights.len() != n || ckpt.biases.len() != n {
            return Err(Error::invalid("checkpoint", format!("expected {n} layers")));
        }
        for l in 0..n {
            let (w, b, fan_in, fan_out) = p.layer_span(l);
            if ckpt.weights[l].len() != fan_in * fan_out || ckpt.biases[l].len() != fan_out {
                return Err(Error::invalid(
                    "checkpoint",
                    format!("layer {l} shape does not match layer_dims"),
                ));
            }
            p.values[w..b].copy_from_slice(&ckpt.weights[l]);
            p.values[b..b + fan_out].copy_from_slice(&ckpt.biases[l]);
        }
        Ok(p)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

/// JSON checkpoint: `layer_dims` header plus row-major weights (`out x in`) and biases per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// Exponent on the prior in logit adjustment.
    pub tau: f64,
    /// Confidence threshold for pseudo-labels.
    pub threshold_t: f64,
    /// Unlabeled to labeled batch ratio.
    pub mu: f64,
    /// Scale on the labeled loss.
    pub alpha: f64,
    pub batch_b: usize,
    pub lr_eta: f64,
    pub epochs: usize,
    pub momentum_m: f64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, rule: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(format!("hyperparams.{field}"), rule))
            }
        };
        check(self.tau >= 0.0, "tau", "must be >= 0")?;
        check((0.0..=1.0).contains(&self.threshold_t), "threshold_t", "must lie in [0, 1]")?;
        check(self.mu > 0.0 && self.mu.is_finite(), "mu", "must be > 0")?;
        check(self.alpha > 0.0 && self.alpha <= 1.0, "alpha", "must lie in (0, 1]")?;
        check(self.batch_b >= 1, "batch_b", "must be >= 1")?;
        check(self.lr_eta > 0.0 && self.lr_eta.is_finite(), "lr_eta", "must be > 0")?;
        check(self.epochs >= 1, "epochs", "must be >= 1")?;
        check((0.0..1.0).contains(&self.momentum_m), "momentum_m", "must lie in [0, 1)")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub loss: f64,
    /// Same layout as [`ModelParams::values`].
    pub grads: Vec<f64>,
}

impl GradReport {
    fn zeros(n: usize) -> Self {
        Self {
            loss: 0.0,
            grads: vec![0.0; n],
        }
    }
}

pub fn logits(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check_input(x)?;
    Ok(params.forward_cached(x).pop().expect("at least one layer"))
}

pub fn logits_batch<'a, I>(params: &ModelParams, xs: I) -> Result<Vec<Vec<f64>>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    xs.into_iter().map(|x| logits(params, x)).collect()
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// `tau * ln(prior)`, failing on a zero entry.
fn prior_shift(prior: &ClassPrior, tau: f64) -> Result<Vec<f64>> {
    Ok(prior.ln()?.into_iter().map(|l| tau * l).collect())
}

fn check_k(prior: &ClassPrior, k: usize) -> Result<()> {
    if prior.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: prior.k(),
        });
    }
    Ok(())
}

/// Bayes-classifier pseudo-label `softmax(logits + tau * ln(pi_u))`.
pub fn bayes_pseudo(logits: &[f64], pi_u: &ClassPrior, tau: f64) -> Result<Vec<f64>> {
    check_k(pi_u, logits.len())?;
    let shift = prior_shift(pi_u, tau)?;
    let z: Vec<f64> = logits.iter().zip(&shift).map(|(f, s)| f + s).collect();
    Ok(softmax(&z))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledBatch {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean over `denom` of `-weight_i * sum_y target_iy * log softmax(f_i + shift)_y`,
/// with exact parameter gradients.
fn weighted_soft_ce(
    params: &ModelParams,
    features: &[Vec<f64>],
    targets: &[Vec<f64>],
    weights: &[f64],
    shift: &[f64],
    denom: f64,
) -> Result<GradReport> {
    let mut report = GradReport::zeros(params.len());
    if features.is_empty() {
        return Ok(report);
    }
    let k = params.k();
    for ((x, q), &w) in features.iter().zip(targets).zip(weights) {
        params.check_input(x)?;
        if q.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: q.len(),
            });
        }
        if w == 0.0 {
            continue;
        }
        let acts = params.forward_cached(x);
        let f = acts.last().unwrap();
        let z: Vec<f64> = f.iter().zip(shift).map(|(a, b)| a + b).collect();
        let lse = log_sum_exp(&z);
        let q_mass: f64 = q.iter().sum();
        let mut dlogits = vec![0.0; k];
        for y in 0..k {
            let log_p = z[y] - lse;
            report.loss -= w * q[y] * log_p;
            dlogits[y] = w * (log_p.exp() * q_mass - q[y]) / denom;
        }
        params.backward(&acts, &dlogits, &mut report.grads);
    }
    report.loss /= denom;
    Ok(report)
}

fn one_hot(y: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[y] = 1.0;
    v
}

/// Soft-target cross-entropy over prior-adjusted logits `f + tau * ln(phi)`, averaged over the batch.
pub fn adjusted_soft_ce(
    params: &ModelParams,
    features: &[Vec<f64>],
    targets: &[Vec<f64>],
    phi: &ClassPrior,
    tau: f64,
) -> Result<GradReport> {
    check_k(phi, params.k())?;
    let shift = prior_shift(phi, tau)?;
    let weights = vec![1.0; features.len()];
    weighted_soft_ce(params, features, targets, &weights, &shift, features.len() as f64)
}

/// Labeled loss: cross-entropy of the labels against `softmax(f + tau * ln(phi))`.
pub fn adjusted_ce_labeled(
    params: &ModelParams,
    batch: &LabeledBatch,
    phi: &ClassPrior,
    tau: f64,
) -> Result<GradReport> {
    let k = params.k();
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid("labels", format!("label {bad} outside [0, {k})")));
    }
    let targets: Vec<Vec<f64>> = batch.labels.iter().map(|&y| one_hot(y, k)).collect();
    adjusted_soft_ce(params, &batch.features, &targets, phi, tau)
}

/// The labeled loss written with the prior inside the normalizer only:
/// `-mean log( exp(f_y) / sum_y' phi_y'^tau exp(f_y') )`.
///
/// Differs from [`adjusted_ce_labeled`] by `tau * ln(phi_y)` per sample, which does not
/// depend on the parameters.
pub fn prior_normalized_ce(
    params: &ModelParams,
    batch: &LabeledBatch,
    phi: &ClassPrior,
    tau: f64,
) -> Result<f64> {
    check_k(phi, params.k())?;
    let shift = prior_shift(phi, tau)?;
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (x, &y) in batch.features.iter().zip(&batch.labels) {
        let f = logits(params, x)?;
        let z: Vec<f64> = f.iter().zip(&shift).map(|(a, b)| a + b).collect();
        total -= f[y] - log_sum_exp(&z);
    }
    Ok(total / batch.len() as f64)
}

/// Pseudo-label targets used on confident unlabeled samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// The full posterior `q`.
    #[default]
    Soft,
    /// One-hot `argmax q`.
    Hard,
}

/// Everything the unlabeled loss needs besides the parameters and the batch.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledObjective<'a> {
    /// Prior in the loss-side adjustment.
    pub phi: &'a ClassPrior,
    /// Prior in the pseudo-label Bayes classifier.
    pub pi_u: &'a ClassPrior,
    pub tau: f64,
    /// Exponent on `pi_u` inside the pseudo-label softmax.
    pub tau_pseudo: f64,
    pub threshold: f64,
    pub targets: TargetKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledReport {
    pub report: GradReport,
    /// `max_y q_y >= threshold` per sample.
    pub mask: Vec<bool>,
    /// Soft pseudo-label `q` for every sample, masked or not.
    pub pseudo_labels: Vec<Vec<f64>>,
}

impl UnlabeledReport {
    /// Column sums of the pseudo-labels that passed the threshold.
    pub fn masked_pseudo_sum(&self, k: usize) -> Vec<f64> {
        let mut sum = vec![0.0; k];
        for (q, _) in self.pseudo_labels.iter().zip(&self.mask).filter(|(_, &m)| m) {
            for (s, v) in sum.iter_mut().zip(q) {
                *s += v;
            }
        }
        sum
    }

    pub fn pseudo_sum(&self, k: usize) -> Vec<f64> {
        let mut sum = vec![0.0; k];
        for q in &self.pseudo_labels {
            for (s, v) in sum.iter_mut().zip(q) {
                *s += v;
            }
        }
        sum
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Unlabeled loss on weak/strong views of the same samples.
///
/// Pseudo-labels come from the weak view through [`bayes_pseudo`] and are treated as
/// constants; predictions come from the strong view adjusted by `phi`. The masked soft
/// cross-entropy is averaged over the whole batch, masked-out samples included.
pub fn unlabeled_loss(
    params: &ModelParams,
    weak: &[Vec<f64>],
    strong: &[Vec<f64>],
    objective: &UnlabeledObjective<'_>,
) -> Result<UnlabeledReport> {
    if weak.len() != strong.len() {
        return Err(Error::invalid(
            "unlabeled batch",
            format!("{} weak views vs {} strong views", weak.len(), strong.len()),
        ));
    }
    let k = params.k();
    check_k(objective.phi, k)?;
    check_k(objective.pi_u, k)?;
    let shift = prior_shift(objective.phi, objective.tau)?;
    if weak.is_empty() {
        return Ok(UnlabeledReport {
            report: GradReport::zeros(params.len()),
            mask: Vec::new(),
            pseudo_labels: Vec::new(),
        });
    }
    let mut pseudo_labels = Vec::with_capacity(weak.len());
    let mut mask = Vec::with_capacity(weak.len());
    let mut targets = Vec::with_capacity(weak.len());
    for x in weak {
        let q = bayes_pseudo(&logits(params, x)?, objective.pi_u, objective.tau_pseudo)?;
        let confident = q.iter().copied().fold(f64::NEG_INFINITY, f64::max) >= objective.threshold;
        targets.push(match objective.targets {
            TargetKind::Soft => q.clone(),
            TargetKind::Hard => one_hot(argmax(&q), k),
        });
        mask.push(confident);
        pseudo_labels.push(q);
    }
    let weights: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let report = weighted_soft_ce(params, strong, &targets, &weights, &shift, weak.len() as f64)?;
    Ok(UnlabeledReport {
        report,
        mask,
        pseudo_labels,
    })
}

/// In-place `params -= lr * grads`.
pub fn sgd_step(params: &mut ModelParams, grads: &[f64], lr: f64) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    for (p, g) in params.values.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Half-cosine decay from `eta0` at step 0 to 0 at `total_steps`.
pub fn cosine_lr(eta0: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return eta0;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    0.5 * eta0 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Central finite differences of `loss` with respect to every parameter.
pub fn finite_difference<F>(params: &ModelParams, step: f64, loss: F) -> Vec<f64>
where
    F: Fn(&ModelParams) -> f64,
{
    let mut probe = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = probe.values[i];
            probe.values[i] = orig + step;
            let plus = loss(&probe);
            probe.values[i] = orig - step;
            let minus = loss(&probe);
            probe.values[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// `||a - b|| / max(||a|| + ||b||, 1e-12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()) + norm(&mut b.iter().copied());
    diff / scale.max(1e-12)
}
