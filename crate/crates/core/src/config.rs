//! Top-level run configuration.

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::sgs::{ApsConfig, SgsConfig};
use crate::synthdata::{Augment, DatasetConfig};
use crate::tadeval::{default_thresholds, InferenceConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub encoder: EncoderConfig,
    pub detector: DetectorConfig,
    pub sgs: SgsConfig,
    pub aps: ApsConfig,
    pub inference: InferenceConfig,
    pub augment: Augment,
    pub thresholds: Vec<f64>,
    pub out_dir: String,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            encoder: EncoderConfig::default(),
            detector: DetectorConfig::default(),
            sgs: SgsConfig::default(),
            aps: ApsConfig::default(),
            inference: InferenceConfig::default(),
            augment: Augment::default(),
            thresholds: default_thresholds(),
            out_dir: "runs/default".into(),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Every violated constraint, in field order.
    pub fn errors(&self) -> Vec<String> {
        let mut e = Vec::new();
        self.dataset.validate(&mut e);
        self.encoder.validate(&mut e);
        self.detector.validate(&mut e);
        self.sgs.validate(self.dataset.snippets, &mut e);
        self.aps.validate(&mut e);
        self.inference.validate(&mut e);
        if self.encoder.frames != self.dataset.frames || self.encoder.frame_dim != self.dataset.frame_dim {
            e.push(format!(
                "encoder input [{}, {}] does not match dataset frames [{}, {}]",
                self.encoder.frames, self.encoder.frame_dim, self.dataset.frames, self.dataset.frame_dim
            ));
        }
        if self.encoder.out_dim != self.detector.feat_dim {
            e.push(format!(
                "encoder.out_dim ({}) must equal detector.feat_dim ({})",
                self.encoder.out_dim, self.detector.feat_dim
            ));
        }
        if self.dataset.snippets < 2 {
            e.push("dataset.snippets must be at least 2 to form proposals".into());
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            e.push("thresholds must be a non-empty list of values in (0, 1]".into());
        }
        if !(self.augment.noise >= 0.0 && self.augment.noise.is_finite()) {
            e.push("augment.noise must be finite and non-negative".into());
        }
        if self.out_dir.is_empty() {
            e.push("out_dir must not be empty".into());
        }
        e
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.errors();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}
