//! The EM training loop.
//!
//! Each step draws a labeled batch and `mu` times as many unlabeled samples.
//! The E-step labels the weak views with the Bayes classifier under the
//! current `pi_u`; the M-step takes one SGD step on `alpha * L_l + L_u` with
//! both losses adjusted by `phi`, and accumulates the confident pseudo-labels.
//! At the end of every epoch `pi_u` and `phi` are re-solved in closed form and
//! blended into the running estimates with momentum `m`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_with, AugmentationSpec, Dataset, SealedLabels, Strength};
use crate::distributions::{anchor_priors, prior_from_counts, AnchorSet, ClassPrior, PRIOR_FLOOR};
use crate::error::{Error, Result};
use crate::metrics::{kl, top1};
use crate::model::{
    adjusted_ce_labeled, cosine_lr, sgd_step, unlabeled_loss, Activation, Hyperparams,
    LabeledBatch, ModelParams, TargetKind, UnlabeledObjective,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmState {
    pub pi_u: ClassPrior,
    pub phi: ClassPrior,
    /// Sum of accepted pseudo-labels seen this epoch.
    pub pi_accumulator: Vec<f64>,
    /// Labeled samples per class seen this epoch.
    pub labeled_counts_epoch: Vec<u64>,
    pub momentum: f64,
    /// Set once the anchor snap has fixed `pi_u`.
    pub pi_frozen: bool,
}

/// Uniform `pi_u`, `phi` at the labeled class frequency, empty accumulators.
pub fn init_state(k: usize, labeled_counts: &[u64], momentum: f64) -> Result<EmState> {
    if k < 2 {
        return Err(Error::invalid("k", "need at least 2 classes"));
    }
    if labeled_counts.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: labeled_counts.len(),
        });
    }
    Ok(EmState {
        pi_u: ClassPrior::uniform(k),
        phi: prior_from_counts(labeled_counts)?,
        pi_accumulator: vec![0.0; k],
        labeled_counts_epoch: vec![0; k],
        momentum,
        pi_frozen: false,
    })
}

fn blend(old: &ClassPrior, new: &[f64], m: f64) -> ClassPrior {
    let mixed: Vec<f64> = old
        .probs()
        .iter()
        .zip(new)
        .map(|(o, n)| (m * o + (1.0 - m) * n).max(0.0))
        .collect();
    ClassPrior::from_weights(&mixed).expect("convex blend of two simplex points")
}

impl EmState {
    pub fn k(&self) -> usize {
        self.pi_u.k()
    }

    /// Closed-form re-estimate of `phi` and `pi_u` from this epoch's accumulators,
    /// blended with momentum. Accumulators are reset. An empty pseudo-label
    /// accumulator leaves `pi_u` as it was.
    pub fn epoch_update(&self) -> EmState {
        let m = self.momentum;
        let pseudo_total: f64 = self.pi_accumulator.iter().sum();
        let joint: Vec<f64> = self
            .pi_accumulator
            .iter()
            .zip(&self.labeled_counts_epoch)
            .map(|(p, &n)| p + n as f64)
            .collect();
        let joint_total: f64 = joint.iter().sum();

        let phi = if joint_total > 0.0 {
            let phi_e: Vec<f64> = joint.iter().map(|v| v / joint_total).collect();
            blend(&self.phi, &phi_e, m)
        } else {
            self.phi.clone()
        };
        let pi_u = if !self.pi_frozen && pseudo_total > 0.0 {
            let pi_e: Vec<f64> = self.pi_accumulator.iter().map(|v| v / pseudo_total).collect();
            blend(&self.pi_u, &pi_e, m)
        } else {
            self.pi_u.clone()
        };
        EmState {
            pi_u,
            phi,
            pi_accumulator: vec![0.0; self.k()],
            labeled_counts_epoch: vec![0; self.k()],
            momentum: m,
            pi_frozen: self.pi_frozen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMetric {
    #[default]
    L1,
    /// `KL(pi_u || anchor)`.
    Kl,
}

/// Replaces `pi_u` with the closest anchor and freezes it. Ties keep the earlier
/// anchor in (consistent, uniform, reversed) order.
pub fn anchor_snap(state: &EmState, anchors: &AnchorSet, metric: AnchorMetric) -> EmState {
    let distance = |a: &ClassPrior| match metric {
        AnchorMetric::L1 => state.pi_u.l1_distance(a),
        AnchorMetric::Kl => kl(&state.pi_u, a),
    };
    let mut best = anchors.consistent.clone();
    let mut best_d = distance(&best);
    for a in &anchors.as_array()[1..] {
        let d = distance(a);
        if d < best_d {
            best = (*a).clone();
            best_d = d;
        }
    }
    EmState {
        pi_u: best,
        pi_frozen: true,
        ..state.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Simpro,
    /// Snaps `pi_u` to the nearest anchor after a warmup and keeps it fixed.
    SimproStar,
    /// Hard pseudo-labels, no prior estimation, no logit adjustment.
    Fixmatch,
}

/// Which estimated priors enter the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    /// Pseudo-labels use the estimated `pi_u` (otherwise a uniform prior).
    pub estimate_in_e_step: bool,
    /// `pi_u` and `phi` are re-estimated and `phi` adjusts the losses
    /// (otherwise `phi` stays uniform).
    pub estimate_in_m_step: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            estimate_in_e_step: true,
            estimate_in_m_step: true,
        }
    }
}

/// What the `pi_u` accumulator sums each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AccumulatorMode {
    /// Only pseudo-labels that pass the confidence threshold.
    #[default]
    Masked,
    /// Every pseudo-label, the plain average over all unlabeled samples.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hyperparams: Hyperparams,
    pub ablation: Ablation,
    pub variant: Variant,
    pub anchor_warmup_epochs: usize,
    pub anchor_metric: AnchorMetric,
    /// Imbalance ratio used to build the anchor priors.
    pub anchor_gamma: f64,
    pub accumulator: AccumulatorMode,
    /// Exponent on `pi_u` in the pseudo-label classifier; `None` reuses `tau`.
    pub tau_pseudo: Option<f64>,
    pub augmentation: AugmentationSpec,
    /// Hidden-layer width; 0 gives a linear softmax model.
    pub hidden_width: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        Hyperparams {
            epochs: self.hyperparams.epochs.max(1),
            ..self.hyperparams
        }
        .validate()?;
        self.augmentation.validate()?;
        if self.variant == Variant::SimproStar {
            if self.anchor_warmup_epochs < 1 {
                return Err(Error::invalid(
                    "training.anchor_warmup_epochs",
                    "must be >= 1 for simpro_star",
                ));
            }
            if !(self.anchor_gamma > 0.0) {
                return Err(Error::invalid("training.anchor_gamma", "must be > 0"));
            }
        }
        if let Some(t) = self.tau_pseudo {
            if !(t >= 0.0) {
                return Err(Error::invalid("training.tau_pseudo", "must be >= 0"));
            }
        }
        Ok(())
    }

    fn effective_ablation(&self) -> Ablation {
        match self.variant {
            Variant::Fixmatch => Ablation {
                estimate_in_e_step: false,
                estimate_in_m_step: false,
            },
            _ => self.ablation,
        }
    }

    fn targets(&self) -> TargetKind {
        match self.variant {
            Variant::Fixmatch => TargetKind::Hard,
            _ => TargetKind::Soft,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub loss_l: f64,
    pub loss_u: f64,
    pub mask_count: usize,
    pub unlabeled_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_l: f64,
    pub loss_u: f64,
    pub mask_rate: f64,
    pub pi_u: ClassPrior,
    pub phi: ClassPrior,
    pub top1: f64,
    pub per_class: Vec<f64>,
    /// `KL(true pi_u || estimate)` when the unlabeled truth is known.
    pub kl_pi_u: Option<f64>,
    /// `KL(true phi || estimate)` when the unlabeled truth is known.
    pub kl_phi: Option<f64>,
}

/// One SGD step plus pseudo-label accumulation. `pi_u` and `phi` are read, not changed.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut ModelParams,
    state: &mut EmState,
    labeled: &LabeledBatch,
    weak: &[Vec<f64>],
    strong: &[Vec<f64>],
    config: &TrainConfig,
    lr: f64,
) -> Result<StepRecord> {
    let k = state.k();
    let ablation = config.effective_ablation();
    let uniform = ClassPrior::uniform(k);
    let phi = if ablation.estimate_in_m_step {
        state.phi.floored(PRIOR_FLOOR)
    } else {
        uniform.clone()
    };
    let pi_u = if ablation.estimate_in_e_step {
        state.pi_u.floored(PRIOR_FLOOR)
    } else {
        uniform
    };
    let tau = config.hyperparams.tau;

    let sup = adjusted_ce_labeled(params, labeled, &phi, tau)?;
    let objective = UnlabeledObjective {
        phi: &phi,
        pi_u: &pi_u,
        tau,
        tau_pseudo: config.tau_pseudo.unwrap_or(tau),
        threshold: config.hyperparams.threshold_t,
        targets: config.targets(),
    };
    let unsup = unlabeled_loss(params, weak, strong, &objective)?;

    let alpha = config.hyperparams.alpha;
    let grads: Vec<f64> = sup
        .grads
        .iter()
        .zip(&unsup.report.grads)
        .map(|(gl, gu)| alpha * gl + gu)
        .collect();
    sgd_step(params, &grads, lr)?;

    let pseudo = match config.accumulator {
        AccumulatorMode::Masked => unsup.masked_pseudo_sum(k),
        AccumulatorMode::All => unsup.pseudo_sum(k),
    };
    for (acc, v) in state.pi_accumulator.iter_mut().zip(pseudo) {
        *acc += v;
    }
    for &y in &labeled.labels {
        state.labeled_counts_epoch[y] += 1;
    }
    Ok(StepRecord {
        loss_l: sup.loss,
        loss_u: unsup.report.loss,
        mask_count: unsup.mask_count(),
        unlabeled_count: weak.len(),
    })
}

/// Inputs to [`train`]. `unlabeled_truth` is used for evaluation only.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
    pub unlabeled_truth: Option<SealedLabels>,
}

impl TrainData {
    fn validate(&self) -> Result<()> {
        let (k, dim) = (self.labeled.k(), self.labeled.dim());
        for (name, ds) in [("unlabeled", &self.unlabeled), ("test", &self.test)] {
            if ds.k() != k || ds.dim() != dim {
                return Err(Error::invalid(
                    name,
                    format!("k/dim {}/{} differ from labeled {k}/{dim}", ds.k(), ds.dim()),
                ));
            }
        }
        if self.labeled.is_empty() {
            return Err(Error::invalid("labeled", "no labeled samples"));
        }
        if let Some(t) = &self.unlabeled_truth {
            if t.reveal().len() != self.unlabeled.len() {
                return Err(Error::invalid("unlabeled_truth", "length differs from unlabeled split"));
            }
        }
        Ok(())
    }

    /// True overall class frequency over labeled plus unlabeled samples.
    pub fn true_phi(&self) -> Option<ClassPrior> {
        let truth = self.unlabeled_truth.as_ref()?;
        let lab = self.labeled.class_counts()?;
        let joint: Vec<u64> = lab.iter().zip(truth.class_counts()).map(|(a, b)| a + b).collect();
        prior_from_counts(&joint).ok()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub state: EmState,
}

const STREAM_INIT: u64 = 10;
const STREAM_LOOP: u64 = 11;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn initial_params(dim: usize, k: usize, config: &TrainConfig) -> Result<ModelParams> {
    let dims = if config.hidden_width == 0 {
        vec![dim, k]
    } else {
        vec![dim, config.hidden_width, k]
    };
    ModelParams::init(dims, Activation::Tanh, stream_rng(config.seed, STREAM_INIT).random())
}

/// Runs the full loop with a cosine learning-rate schedule, evaluating on the test
/// split after every epoch. Deterministic given `config.seed`.
pub fn train(data: &TrainData, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    data.validate()?;
    let (k, dim) = (data.labeled.k(), data.labeled.dim());
    let hp = &config.hyperparams;
    let ablation = config.effective_ablation();
    let labels = data.labeled.labels().expect("labeled split carries labels");

    let mut params = initial_params(dim, k, config)?;
    let mut state = init_state(k, &data.labeled.class_counts().unwrap(), hp.momentum_m)?;
    if !ablation.estimate_in_m_step {
        state.phi = ClassPrior::uniform(k);
    }
    let anchors: Option<AnchorSet> = match config.variant {
        Variant::SimproStar => Some(anchor_priors(k, config.anchor_gamma)?),
        _ => None,
    };
    let true_pi_u = data.unlabeled_truth.as_ref().and_then(|t| t.prior().ok());
    let true_phi = data.true_phi();

    let n = data.labeled.len();
    let m = data.unlabeled.len();
    let b = hp.batch_b;
    let ub = (hp.mu * b as f64).ceil() as usize;
    let steps = n.div_ceil(b);
    let total_steps = hp.epochs * steps;
    let aug = &config.augmentation;
    let mut rng = stream_rng(config.seed, STREAM_LOOP);
    let mut order_l: Vec<usize> = (0..n).collect();
    let mut order_u: Vec<usize> = (0..m).collect();
    let mut history = Vec::with_capacity(hp.epochs);
    let mut global_step = 0;

    for epoch in 0..hp.epochs {
        order_l.shuffle(&mut rng);
        order_u.shuffle(&mut rng);
        let (mut sum_l, mut sum_u) = (0.0, 0.0);
        let (mut masked, mut seen) = (0usize, 0usize);
        for s in 0..steps {
            let li = &order_l[s * b..((s + 1) * b).min(n)];
            let ui = &order_u[(s * ub).min(m)..((s + 1) * ub).min(m)];
            let batch = LabeledBatch {
                features: li
                    .iter()
                    .map(|&i| augment_with(data.labeled.row(i), aug, Strength::Weak, &mut rng))
                    .collect(),
                labels: li.iter().map(|&i| labels[i]).collect(),
            };
            let mut weak = Vec::with_capacity(ui.len());
            let mut strong = Vec::with_capacity(ui.len());
            for &i in ui {
                let x = data.unlabeled.row(i);
                weak.push(augment_with(x, aug, Strength::Weak, &mut rng));
                strong.push(augment_with(x, aug, Strength::Strong, &mut rng));
            }
            let lr = cosine_lr(hp.lr_eta, global_step, total_steps);
            let rec = train_step(&mut params, &mut state, &batch, &weak, &strong, config, lr)?;
            sum_l += rec.loss_l;
            sum_u += rec.loss_u;
            masked += rec.mask_count;
            seen += rec.unlabeled_count;
            global_step += 1;
        }

        state = if ablation.estimate_in_m_step {
            state.epoch_update()
        } else {
            EmState {
                pi_accumulator: vec![0.0; k],
                labeled_counts_epoch: vec![0; k],
                ..state
            }
        };
        if let Some(anchors) = &anchors {
            if epoch + 1 == config.anchor_warmup_epochs {
                state = anchor_snap(&state, anchors, config.anchor_metric);
            }
        }

        let (acc, per_class) = top1(&params, &data.test)?;
        history.push(EpochRecord {
            epoch,
            loss_l: sum_l / steps as f64,
            loss_u: sum_u / steps as f64,
            mask_rate: if seen == 0 { 0.0 } else { masked as f64 / seen as f64 },
            pi_u: state.pi_u.clone(),
            phi: state.phi.clone(),
            top1: acc,
            per_class,
            kl_pi_u: true_pi_u.as_ref().map(|t| kl(t, &state.pi_u)),
            kl_phi: true_phi.as_ref().map(|t| kl(t, &state.phi)),
        });
    }
    Ok(TrainOutcome {
        params,
        history,
        state,
    })
}

/// The hard-label baseline: same loop with no prior estimation and no adjustment.
pub fn fixmatch_baseline(data: &TrainData, config: &TrainConfig) -> Result<TrainOutcome> {
    train(
        data,
        &TrainConfig {
            variant: Variant::Fixmatch,
            ..config.clone()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, MixtureSpec, SplitTag};
    use crate::model::adjusted_ce_labeled;

    fn prior(v: &[f64]) -> ClassPrior {
        ClassPrior::new(v.to_vec()).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            hyperparams: Hyperparams {
                tau: 1.0,
                threshold_t: 0.95,
                mu: 2.0,
                alpha: 1.0,
                batch_b: 16,
                lr_eta: 0.1,
                epochs: 3,
                momentum_m: 0.9,
            },
            ablation: Ablation::default(),
            variant: Variant::Simpro,
            anchor_warmup_epochs: 1,
            anchor_metric: AnchorMetric::L1,
            anchor_gamma: 3.0,
            accumulator: AccumulatorMode::Masked,
            tau_pseudo: None,
            augmentation: AugmentationSpec::default(),
            hidden_width: 8,
            seed: 5,
        }
    }

    fn data() -> TrainData {
        let spec = MixtureSpec::circle(3, 2, 2.0, 1.0).unwrap();
        let unl = synthesize(&spec, &[10, 30, 60], SplitTag::Unlabeled, 1).unwrap();
        TrainData {
            labeled: synthesize(&spec, &[30, 12, 5], SplitTag::Labeled, 1).unwrap().dataset,
            unlabeled: unl.dataset,
            test: synthesize(&spec, &[40, 40, 40], SplitTag::Test, 1).unwrap().dataset,
            unlabeled_truth: unl.truth,
        }
    }

    #[test]
    fn init_state_examples() {
        let s = init_state(4, &[1, 1, 1, 1], 0.9).unwrap();
        assert_eq!(s.pi_u.probs(), &[0.25; 4]);
        assert_eq!(s.pi_accumulator, vec![0.0; 4]);
        let s = init_state(2, &[3, 1], 0.9).unwrap();
        assert_eq!(s.phi.probs(), &[0.75, 0.25]);
        assert!(init_state(1, &[1], 0.9).is_err());
    }

    #[test]
    fn epoch_update_without_momentum() {
        let mut s = init_state(2, &[1, 1], 0.0).unwrap();
        s.pi_accumulator = vec![9.0, 1.0];
        s.labeled_counts_epoch = vec![5, 5];
        let next = s.epoch_update();
        assert!((next.phi.probs()[0] - 0.7).abs() < 1e-15);
        assert!((next.phi.probs()[1] - 0.3).abs() < 1e-15);
        assert!((next.pi_u.probs()[0] - 0.9).abs() < 1e-15);
        assert_eq!(next.pi_accumulator, vec![0.0, 0.0]);
        assert_eq!(next.labeled_counts_epoch, vec![0, 0]);
    }

    #[test]
    fn full_momentum_keeps_state() {
        let mut s = init_state(3, &[5, 3, 2], 0.0).unwrap();
        s.momentum = 1.0;
        s.pi_accumulator = vec![1.0, 4.0, 2.0];
        s.labeled_counts_epoch = vec![5, 3, 2];
        let next = s.epoch_update();
        assert_eq!(next.pi_u, s.pi_u);
        assert_eq!(next.phi, s.phi);
    }

    #[test]
    fn geometric_convergence_to_constant_signal() {
        let mut s = init_state(3, &[1, 1, 1], 0.5).unwrap();
        let target = [0.2, 0.3, 0.5];
        let mut prev_gap = f64::INFINITY;
        for _ in 0..40 {
            s.pi_accumulator = target.iter().map(|v| v * 10.0).collect();
            s = s.epoch_update();
            let gap = s.pi_u.l1_distance(&prior(&target));
            assert!(gap <= prev_gap * 0.5 + 1e-15);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-9);
    }

    #[test]
    fn empty_accumulator_keeps_pi() {
        let mut s = init_state(2, &[3, 1], 0.0).unwrap();
        s.pi_u = prior(&[0.3, 0.7]);
        s.labeled_counts_epoch = vec![3, 1];
        let next = s.epoch_update();
        assert_eq!(next.pi_u, s.pi_u);
        assert_eq!(next.phi.probs(), &[0.75, 0.25]);
    }

    #[test]
    fn anchor_snap_examples() {
        let anchors = anchor_priors(2, 3.0).unwrap();
        let mut s = init_state(2, &[1, 1], 0.9).unwrap();
        s.pi_u = prior(&[0.6, 0.4]);
        let snapped = anchor_snap(&s, &anchors, AnchorMetric::L1);
        assert_eq!(snapped.pi_u.probs(), &[0.5, 0.5]);
        assert!(snapped.pi_frozen);

        s.pi_u = anchors.reversed.clone();
        assert_eq!(anchor_snap(&s, &anchors, AnchorMetric::Kl).pi_u, anchors.reversed);

        // Equidistant from consistent and uniform in L1.
        s.pi_u = prior(&[0.625, 0.375]);
        assert_eq!(anchor_snap(&s, &anchors, AnchorMetric::L1).pi_u, anchors.consistent);
    }

    #[test]
    fn frozen_pi_survives_updates() {
        let anchors = anchor_priors(2, 3.0).unwrap();
        let s = anchor_snap(&init_state(2, &[1, 1], 0.5).unwrap(), &anchors, AnchorMetric::L1);
        let mut t = s.clone();
        t.pi_accumulator = vec![1.0, 9.0];
        t.labeled_counts_epoch = vec![1, 1];
        let t = t.epoch_update();
        assert_eq!(t.pi_u, s.pi_u);
        assert_ne!(t.phi, s.phi);
    }

    #[test]
    fn empty_unlabeled_is_supervised_step() {
        let d = data();
        let cfg = config();
        let mut params = initial_params(2, 3, &cfg).unwrap();
        let mut state = init_state(3, &[30, 12, 5], 0.9).unwrap();
        let batch = LabeledBatch {
            features: (0..6).map(|i| d.labeled.row(i).to_vec()).collect(),
            labels: d.labeled.labels().unwrap()[..6].to_vec(),
        };
        let mut expected = params.clone();
        let g = adjusted_ce_labeled(&expected, &batch, &state.phi, 1.0).unwrap();
        sgd_step(&mut expected, &g.grads, 0.05).unwrap();
        let rec = train_step(&mut params, &mut state, &batch, &[], &[], &cfg, 0.05).unwrap();
        assert_eq!(params, expected);
        assert_eq!(rec.loss_u, 0.0);
        assert_eq!(state.pi_accumulator, vec![0.0; 3]);
    }

    #[test]
    fn step_descends_and_masks() {
        let d = data();
        let mut cfg = config();
        cfg.hyperparams.threshold_t = 1.0;
        let mut params = initial_params(2, 3, &cfg).unwrap();
        let mut state = init_state(3, &[30, 12, 5], 0.9).unwrap();
        let batch = LabeledBatch {
            features: d.labeled.rows().map(<[f64]>::to_vec).collect(),
            labels: d.labeled.labels().unwrap().to_vec(),
        };
        let before = adjusted_ce_labeled(&params, &batch, &state.phi, 1.0).unwrap().loss;
        let weak: Vec<Vec<f64>> = d.unlabeled.rows().take(8).map(<[f64]>::to_vec).collect();
        let pi_before = state.pi_u.clone();
        let rec = train_step(&mut params, &mut state, &batch, &weak, &weak, &cfg, 0.01).unwrap();
        assert_eq!(rec.mask_count, 0);
        assert_eq!(state.pi_accumulator, vec![0.0; 3]);
        assert_eq!(state.pi_u, pi_before);
        let after = adjusted_ce_labeled(&params, &batch, &state.phi, 1.0).unwrap().loss;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn zero_epochs() {
        let mut cfg = config();
        cfg.hyperparams.epochs = 0;
        let out = train(&data(), &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.params, initial_params(2, 3, &cfg).unwrap());
    }

    #[test]
    fn deterministic_history() {
        let cfg = config();
        let d = data();
        let a = train(&d, &cfg).unwrap();
        let b = train(&d, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        let c = fixmatch_baseline(&d, &cfg).unwrap();
        let e = fixmatch_baseline(&d, &cfg).unwrap();
        assert_eq!(c.history, e.history);
    }

    #[test]
    fn fixmatch_pins_priors() {
        let out = fixmatch_baseline(&data(), &config()).unwrap();
        for r in &out.history {
            assert_eq!(r.pi_u, ClassPrior::uniform(3));
            assert_eq!(r.phi, ClassPrior::uniform(3));
        }
    }

    #[test]
    fn anchor_variant_freezes_after_warmup() {
        let mut cfg = config();
        cfg.variant = Variant::SimproStar;
        cfg.anchor_warmup_epochs = 1;
        cfg.hyperparams.epochs = 4;
        let out = train(&data(), &cfg).unwrap();
        let first = &out.history[0].pi_u;
        let anchors = anchor_priors(3, 3.0).unwrap();
        assert!(anchors.as_array().contains(&first));
        for r in &out.history[1..] {
            assert_eq!(&r.pi_u, first);
        }
        cfg.anchor_warmup_epochs = 0;
        assert!(train(&data(), &cfg).is_err());
    }
}
