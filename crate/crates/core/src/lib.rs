//! Expectation-maximization training for long-tailed semi-supervised learning
//! with an unknown unlabeled class distribution.
//!
//! The unlabeled class prior and the overall class frequency are re-estimated in
//! closed form each epoch and used to adjust logits in the losses and the
//! pseudo-labels.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod quad;
pub mod theory;

pub use config::ExperimentConfig;
pub use data::{AugmentationSpec, Dataset, MixtureSpec, SplitTag};
pub use distributions::{ClassPrior, ImbalanceProfile, Pattern};
pub use engine::{
    Ablation, AccumulatorMode, AnchorMetric, EmState, EpochRecord, TrainConfig, TrainData,
    TrainOutcome, Variant,
};
pub use error::{Error, Result};
pub use model::{Hyperparams, ModelParams};
