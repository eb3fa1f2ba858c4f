//! Sequentialized gradient sampling: sequential eval-mode encoding, a
//! detector step that yields the feature gradient, and a sampled sequential
//! re-forward of the encoder seeded with rows of that gradient.

mod optim;
mod stages;
mod train;

use serde::{Deserialize, Serialize};

use crate::samplers::Strategy;

pub use optim::{AdamW, OptimizerState};
pub use stages::{
    aps_proposals, naive_e2e_step, sample_snippets, stage1_sequential_encode, stage2_detector_step,
    stage3_sampled_update, DetectorStep, ENCODER_PHASE, DETECTOR_PHASE,
};
pub use train::{train, train_with, Checkpoint, MetricsRow, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgsConfig {
    pub micro_batch: usize,
    pub gamma: f64,
    pub snippet_sampler: Strategy,
    pub lr_detector: f64,
    pub lr_encoder: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Learning rates are multiplied by `lr_decay` after this many epochs.
    pub decay_after: usize,
    pub lr_decay: f64,
    pub batch_videos: usize,
    /// Divide sampled feature gradients by `gamma`.
    pub rescale: bool,
    /// Encoder parameters excluded from updates.
    pub freeze: Vec<String>,
    /// Train with one parallel forward and backward instead of the three stages.
    pub naive_e2e: bool,
}

impl Default for SgsConfig {
    fn default() -> Self {
        Self {
            micro_batch: 4,
            gamma: 0.3,
            snippet_sampler: Strategy::Random,
            lr_detector: 3e-3,
            lr_encoder: 1e-3,
            weight_decay: 1e-4,
            epochs: 16,
            decay_after: 12,
            lr_decay: 0.1,
            batch_videos: 1,
            rescale: false,
            freeze: Vec::new(),
            naive_e2e: false,
        }
    }
}

impl SgsConfig {
    pub fn validate(&self, n_snippets: usize, errors: &mut Vec<String>) {
        if self.micro_batch == 0 || self.micro_batch > n_snippets {
            errors.push(format!("sgs.micro_batch must lie in [1, {n_snippets}], got {}", self.micro_batch));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            errors.push(format!("sgs.gamma must lie in [0, 1], got {}", self.gamma));
        }
        for (name, v) in [
            ("sgs.lr_detector", self.lr_detector),
            ("sgs.lr_encoder", self.lr_encoder),
            ("sgs.weight_decay", self.weight_decay),
            ("sgs.lr_decay", self.lr_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errors.push(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.batch_videos == 0 {
            errors.push("sgs.batch_videos must be at least 1".into());
        }
        if self.snippet_sampler.needs_labels() {
            errors.push(format!("sgs.snippet_sampler `{}` needs proposal labels", self.snippet_sampler));
        }
        for name in &self.freeze {
            if !crate::encoder::ENCODER_PARAMS.contains(&name.as_str()) {
                errors.push(format!("sgs.freeze names unknown encoder parameter `{name}`"));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApsConfig {
    pub ratio: f64,
    pub strategy: Strategy,
}

impl Default for ApsConfig {
    fn default() -> Self {
        Self { ratio: 0.06, strategy: Strategy::Random }
    }
}

impl ApsConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            errors.push(format!("aps.ratio must lie in (0, 1], got {}", self.ratio));
        }
    }
}

#[cfg(test)]
mod tests;
