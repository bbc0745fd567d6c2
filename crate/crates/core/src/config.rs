//! TOML experiment configuration.
//!
//! A config file fully determines a run. Every optional key has a documented
//! default, and [`ExperimentConfig::resolved_json`] echoes the effective values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentationSpec, MixtureSpec};
use crate::distributions::{class_counts, ImbalanceProfile, Pattern};
use crate::engine::{Ablation, AccumulatorMode, AnchorMetric, TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::model::Hyperparams;

/// Class-conditional layout. Either `means` + `sigmas`, or a circle of `radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub k: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
}

fn default_dim() -> usize {
    2
}
fn default_radius() -> f64 {
    3.0
}
fn default_sigma() -> f64 {
    1.0
}

impl MixtureConfig {
    pub fn spec(&self) -> Result<MixtureSpec> {
        let spec = match (&self.means, &self.sigmas) {
            (Some(means), Some(sigmas)) => MixtureSpec::new(means.clone(), sigmas.clone())?,
            (Some(means), None) => MixtureSpec::new(means.clone(), vec![self.sigma; means.len()])?,
            (None, Some(_)) => {
                return Err(Error::invalid("mixture.sigmas", "requires mixture.means"));
            }
            (None, None) => {
                if !(self.radius > 0.0) || !self.radius.is_finite() {
                    return Err(Error::invalid("mixture.radius", "must be > 0"));
                }
                if !(self.sigma > 0.0) || !self.sigma.is_finite() {
                    return Err(Error::invalid("mixture.sigma", "must be > 0"));
                }
                MixtureSpec::circle(self.k, self.dim, self.radius, self.sigma)
                    .map_err(|e| prefix("mixture", e))?
            }
        };
        if spec.k != self.k {
            return Err(Error::invalid(
                "mixture.k",
                format!("k = {} but means has {} rows", self.k, spec.k),
            ));
        }
        if spec.dim != self.dim {
            return Err(Error::invalid(
                "mixture.dim",
                format!("dim = {} but means rows have length {}", self.dim, spec.dim),
            ));
        }
        Ok(spec)
    }
}

/// Per-split class counts: an imbalance profile or an explicit count vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_count: Option<u64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_pattern")]
    pub pattern: Pattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<u64>>,
}

fn default_gamma() -> f64 {
    1.0
}
fn default_pattern() -> Pattern {
    Pattern::Consistent
}

impl SplitConfig {
    pub fn counts(&self, section: &str, k: usize) -> Result<Vec<u64>> {
        let field = |f: &str| format!("{section}.{f}");
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(
                field("gamma"),
                format!("must be a finite positive ratio, got {}", self.gamma),
            ));
        }
        match (self.head_count, &self.counts) {
            (Some(_), Some(_)) => Err(Error::invalid(
                field("counts"),
                "give either head_count or counts, not both",
            )),
            (None, None) => Err(Error::invalid(field("head_count"), "missing")),
            (None, Some(c)) => {
                if c.len() != k {
                    return Err(Error::invalid(
                        field("counts"),
                        format!("expected {k} entries, got {}", c.len()),
                    ));
                }
                Ok(c.clone())
            }
            (Some(head), None) => {
                let profile = ImbalanceProfile {
                    k,
                    head_count: head,
                    gamma: self.gamma,
                    pattern: self.pattern,
                };
                profile.validate().map_err(|e| prefix(section, e))?;
                class_counts(&profile).map_err(|e| prefix(section, e))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparamsConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_threshold")]
    pub threshold_t: f64,
    /// Defaults to M/N, the unlabeled to labeled size ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_batch")]
    pub batch_b: usize,
    #[serde(default = "default_lr")]
    pub lr_eta: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_momentum")]
    pub momentum_m: f64,
}

fn default_tau() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    0.95
}
fn default_alpha() -> f64 {
    1.0
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    0.17
}
fn default_epochs() -> usize {
    50
}
fn default_momentum() -> f64 {
    0.9
}

impl Default for HyperparamsConfig {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            threshold_t: default_threshold(),
            mu: None,
            alpha: default_alpha(),
            batch_b: default_batch(),
            lr_eta: default_lr(),
            epochs: default_epochs(),
            momentum_m: default_momentum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_true")]
    pub estimate_in_e_step: bool,
    #[serde(default = "default_true")]
    pub estimate_in_m_step: bool,
    #[serde(default = "default_warmup")]
    pub anchor_warmup_epochs: usize,
    #[serde(default)]
    pub anchor_metric: AnchorMetric,
    /// Defaults to the labeled split's gamma.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_gamma: Option<f64>,
    #[serde(default)]
    pub accumulator: AccumulatorMode,
    /// Defaults to `hyperparams.tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_pseudo: Option<f64>,
    #[serde(default = "default_hidden")]
    pub hidden_width: usize,
}

fn default_true() -> bool {
    true
}
fn default_warmup() -> usize {
    5
}
fn default_hidden() -> usize {
    16
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            variant: Variant::default(),
            estimate_in_e_step: true,
            estimate_in_m_step: true,
            anchor_warmup_epochs: default_warmup(),
            anchor_metric: AnchorMetric::default(),
            anchor_gamma: None,
            accumulator: AccumulatorMode::default(),
            tau_pseudo: None,
            hidden_width: default_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub mixture: MixtureConfig,
    pub labeled: SplitConfig,
    pub unlabeled: SplitConfig,
    pub test: SplitConfig,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
    #[serde(default)]
    pub hyperparams: HyperparamsConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("simpro-out")
}

/// Rewrites an `Invalid` error's field as `section.field` unless already qualified.
fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Invalid { field, reason } if !field.contains('.') => Error::Invalid {
            field: format!("{section}.{field}"),
            reason,
        },
        other => other,
    }
}

/// Everything a run needs once sizes are known.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSplits {
    pub spec: MixtureSpec,
    pub labeled: Vec<u64>,
    pub unlabeled: Vec<u64>,
    pub test: Vec<u64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn splits(&self) -> Result<ResolvedSplits> {
        let spec = self.mixture.spec()?;
        let k = spec.k;
        let labeled = self.labeled.counts("labeled", k)?;
        let unlabeled = self.unlabeled.counts("unlabeled", k)?;
        let test = self.test.counts("test", k)?;
        if labeled.iter().sum::<u64>() == 0 {
            return Err(Error::invalid("labeled.counts", "no labeled samples"));
        }
        if test.contains(&0) {
            return Err(Error::invalid("test.counts", "every class needs a test sample"));
        }
        Ok(ResolvedSplits {
            spec,
            labeled,
            unlabeled,
            test,
        })
    }

    /// Training configuration for one seed with `mu` resolved against split sizes.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let splits = self.splits()?;
        let n: u64 = splits.labeled.iter().sum();
        let m: u64 = splits.unlabeled.iter().sum();
        let hp = &self.hyperparams;
        let mu = match hp.mu {
            Some(mu) => mu,
            None if m == 0 => 1.0,
            None => m as f64 / n as f64,
        };
        let config = TrainConfig {
            hyperparams: Hyperparams {
                tau: hp.tau,
                threshold_t: hp.threshold_t,
                mu,
                alpha: hp.alpha,
                batch_b: hp.batch_b,
                lr_eta: hp.lr_eta,
                epochs: hp.epochs,
                momentum_m: hp.momentum_m,
            },
            ablation: Ablation {
                estimate_in_e_step: self.training.estimate_in_e_step,
                estimate_in_m_step: self.training.estimate_in_m_step,
            },
            variant: self.training.variant,
            anchor_warmup_epochs: self.training.anchor_warmup_epochs,
            anchor_metric: self.training.anchor_metric,
            anchor_gamma: self.training.anchor_gamma.unwrap_or(self.labeled.gamma),
            accumulator: self.training.accumulator,
            tau_pseudo: self.training.tau_pseudo,
            augmentation: self.augmentation,
            hidden_width: self.training.hidden_width,
            seed,
        };
        config.validate().map_err(|e| prefix("training", e))?;
        Ok(config)
    }

    /// Checks every nested invariant, reporting the first violation by field path.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "must list at least one seed"));
        }
        self.augmentation
            .validate()
            .map_err(|e| prefix("augmentation", e))?;
        if let Some(mu) = self.hyperparams.mu {
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(Error::invalid("hyperparams.mu", "must be > 0"));
            }
        }
        if self.hyperparams.epochs < 1 {
            return Err(Error::invalid("hyperparams.epochs", "must be >= 1"));
        }
        self.train_config(self.seeds[0])?;
        Ok(())
    }

    /// The parsed config with defaults filled in, plus the resolved training settings.
    pub fn resolved_json(&self, seed: u64) -> Result<serde_json::Value> {
        let train = self.train_config(seed)?;
        let splits = self.splits()?;
        Ok(serde_json::json!({
            "experiment": self,
            "resolved": {
                "seed": seed,
                "train": train,
                "mixture": splits.spec,
                "counts": {
                    "labeled": splits.labeled,
                    "unlabeled": splits.unlabeled,
                    "test": splits.test,
                },
            },
        }))
    }
}
