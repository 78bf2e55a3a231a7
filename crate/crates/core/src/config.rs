//! Everything a run needs, in one serializable structure.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::model::ModelConfig;
use crate::synthdata::SynthParams;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.fusion.validate()
    }

    /// Reads a JSON config; absent fields keep their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_constants() {
        let c = RunConfig::default();
        let l = &c.train.loss;
        assert_eq!((l.alpha, l.beta, l.gamma, l.lambda), (2.0, 1.0, 2.0, 0.8));
        assert_eq!(c.fusion.votes, 3);
        assert_eq!(c.fusion.detector.detection_threshold, 0.7);
        assert_eq!(c.fusion.pixel_threshold, 0.5);
        assert_eq!(c.fusion.attention_threshold, 0.7);
        assert_eq!(c.model.anchors.scales, vec![8.0, 16.0, 32.0, 64.0, 128.0]);
        assert_eq!((c.train.lr_phase1, c.train.lr_phase2), (0.001, 0.0001));
        assert_eq!(c.train.weight_decay, 0.0001);
        assert_eq!(c.train.images_per_step, 1);
        assert_eq!(c.train.roi_samples_per_image, 32);
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"fusion": {"votes": 2}, "train": {"seed": 9}}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.fusion.votes, 2);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.train.loss, RunConfig::default().train.loss);
        c.save(&p).unwrap();
        assert_eq!(RunConfig::load(&p).unwrap(), c);
    }

    #[test]
    fn unknown_or_invalid_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"fuson": {}}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
        fs::write(&p, r#"{"fusion": {"votes": 9}}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
    }
}
