//! The full network: backbone, proposal head and mask head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{image_tensor, AnchorConfig, BBox, Backbone, BackboneConfig, FeatureMaps, ProposalHead};
use crate::error::{Error, Result};
use crate::imaging::LatentImage;
use crate::nn::Parameters;
use crate::seghead::{nonwarp_roialign, MaskHead, MaskHeadConfig, RoIMaskSet};

/// Everything that determines the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub anchors: AnchorConfig,
    pub mask_head: MaskHeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            anchors: AnchorConfig::default(),
            mask_head: MaskHeadConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.anchors.validate()?;
        if self.anchors.stride != 8 {
            return Err(Error::validation(format!(
                "anchors must tile the stride-8 level, got stride {}",
                self.anchors.stride
            )));
        }
        let b = &self.backbone;
        if [b.stem_channels, b.low_channels, b.high_channels]
            .iter()
            .chain(&self.mask_head.mid_channels)
            .any(|&c| c == 0)
        {
            return Err(Error::validation("channel counts must be positive"));
        }
        if self.mask_head.canvas < 4 || self.mask_head.classes == 0 {
            return Err(Error::validation("mask canvas must be >= 4 with at least one class"));
        }
        Ok(())
    }

    /// Hex digest identifying the parameter layout.
    pub fn architecture_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegFinNet {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub proposals: ProposalHead,
    pub mask_head: MaskHead,
}

impl SegFinNet {
    /// All-zero weights.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let bb = config.backbone;
        Ok(SegFinNet {
            backbone: Backbone::new(&bb),
            proposals: ProposalHead::new(bb.high_channels, config.anchors.per_cell()),
            mask_head: MaskHead::new(bb.low_channels, bb.high_channels, &config.mask_head),
            config,
        })
    }

    /// Randomly initialised weights, deterministic in `seed`.
    pub fn initialized(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = SegFinNet::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.backbone.init(&mut rng);
        m.proposals.init(&mut rng);
        m.mask_head.init(&mut rng);
        Ok(m)
    }

    /// Zeroed copy for gradient accumulation.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero();
        g
    }

    pub fn features(&self, img: &LatentImage) -> Result<FeatureMaps> {
        self.backbone.forward(&image_tensor(img))
    }

    pub fn canvas(&self) -> usize {
        self.mask_head.canvas
    }

    /// RoI extraction on both levels, fusion and mask upsampling for one box.
    pub fn roi_masks(&self, features: &FeatureMaps, bbox: &BBox) -> Result<RoIMaskSet> {
        let canvas = self.canvas();
        let high = nonwarp_roialign(features.high(), bbox, canvas)?;
        let low = nonwarp_roialign(features.low(), bbox, canvas)?;
        let fused = self.mask_head.fuse_multiscale(&high, &low)?;
        self.mask_head.atrous_upsample(&fused)
    }
}

impl Parameters for SegFinNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.backbone.visit(&mut |p, v| f(&format!("backbone.{p}"), v));
        self.proposals.visit(&mut |p, v| f(&format!("proposals.{p}"), v));
        self.mask_head.visit(&mut |p, v| f(&format!("mask_head.{p}"), v));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        self.backbone.visit_mut(&mut |p, v| f(&format!("backbone.{p}"), v));
        self.proposals.visit_mut(&mut |p, v| f(&format!("proposals.{p}"), v));
        self.mask_head.visit_mut(&mut |p, v| f(&format!("mask_head.{p}"), v));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_layout() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        assert_eq!(a.architecture_hash(), b.architecture_hash());
        b.mask_head.canvas = 32;
        assert_ne!(a.architecture_hash(), b.architecture_hash());
    }

    #[test]
    fn init_is_seeded() {
        let a = SegFinNet::initialized(ModelConfig::default(), 4).unwrap();
        let b = SegFinNet::initialized(ModelConfig::default(), 4).unwrap();
        let c = SegFinNet::initialized(ModelConfig::default(), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_names_are_unique() {
        let m = SegFinNet::zeroed(ModelConfig::default()).unwrap();
        let mut names = Vec::new();
        m.visit(&mut |n, _| names.push(n.to_string()));
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }
}
