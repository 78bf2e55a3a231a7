//! Segmentation of a whole latent: per-variant score maps, majority voting
//! over their thresholded masks, and the averaged heatmap.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_decisions, AttentionDecision, DEFAULT_ATTENTION_THRESHOLD};
use crate::detector::{detect_from_features, Detection, DetectorConfig, Label};
use crate::error::{Error, Result};
use crate::imaging::{generate_variants, GrayscaleVariant, LatentImage, VariantKind};
use crate::mask::{BinaryMask, ScoreMap};
use crate::model::SegFinNet;
use crate::seghead::{paste_into, RoIMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub detector: DetectorConfig,
    pub attention_threshold: f64,
    pub use_attention: bool,
    pub use_voting: bool,
    /// Minimum votes for a fused foreground pixel.
    pub votes: usize,
    pub pixel_threshold: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            detector: DetectorConfig::default(),
            attention_threshold: DEFAULT_ATTENTION_THRESHOLD,
            use_attention: true,
            use_voting: true,
            votes: 3,
            pixel_threshold: 0.5,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.attention_threshold) || !unit(self.pixel_threshold) {
            return Err(Error::validation("thresholds must lie in [0, 1]"));
        }
        if !unit(self.detector.detection_threshold) || !unit(self.detector.nms_iou) {
            return Err(Error::validation("detector thresholds must lie in [0, 1]"));
        }
        if self.use_voting && !(1..=VariantKind::ALL.len()).contains(&self.votes) {
            return Err(Error::validation(format!(
                "votes must lie in 1..={}, got {}",
                VariantKind::ALL.len(),
                self.votes
            )));
        }
        Ok(())
    }
}

/// One fingermark that survived filtering, pasted onto the image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub detection: Detection,
    pub scores: ScoreMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutput {
    pub kind: VariantKind,
    pub scores: ScoreMap,
    pub detections: Vec<Detection>,
    pub decisions: Vec<AttentionDecision>,
    pub instances: Vec<Instance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub mask: BinaryMask,
    pub heatmap: ScoreMap,
    /// Kept fingermarks of the original rendering.
    pub instances: Vec<Instance>,
    pub variants: Vec<VariantOutput>,
}

/// Merges per-box masks onto a `width × height` map by per-pixel maximum.
pub fn merge_instances(masks: &[RoIMask], width: usize, height: usize) -> ScoreMap {
    let mut out = ScoreMap::zeros(width, height);
    for m in masks {
        paste_into(m, &mut out, true);
    }
    out
}

/// Detect, filter by attention, predict one mask per kept fingermark and paste.
pub fn variant_scoremap(
    variant: &GrayscaleVariant,
    model: &SegFinNet,
    config: &FusionConfig,
) -> Result<VariantOutput> {
    let img = &variant.image;
    let (w, h) = (img.width(), img.height());
    let features = model.features(img)?;
    let detections = detect_from_features(&features, w, h, model, &config.detector)?;
    let decisions = attention_decisions(&detections, config.attention_threshold);
    let channel = Label::Fingermark.mask_channel();
    let mut instances = Vec::new();
    let mut scores = ScoreMap::zeros(w, h);
    for d in &decisions {
        if config.use_attention && !d.kept {
            continue;
        }
        let set = model.roi_masks(&features, &d.detection.bbox)?;
        set.probs.ensure_finite("mask_head")?;
        let roi = set.class_mask(channel);
        let mut inst = ScoreMap::zeros(w, h);
        paste_into(&roi, &mut inst, false);
        scores.max_assign(&inst);
        instances.push(Instance {
            detection: d.detection,
            scores: inst,
        });
    }
    Ok(VariantOutput {
        kind: variant.kind,
        scores,
        detections,
        decisions,
        instances,
    })
}

/// Pixels set in at least `k` of the masks.
pub fn vote_masks(masks: &[BinaryMask], k: usize) -> Result<BinaryMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::validation("voting needs at least one mask"))?;
    if k == 0 || k > masks.len() {
        return Err(Error::validation(format!(
            "vote count {k} outside 1..={}",
            masks.len()
        )));
    }
    let (w, h) = first.dims();
    if let Some(m) = masks.iter().find(|m| m.dims() != (w, h)) {
        return Err(Error::validation(format!(
            "mask {}x{} does not match {w}x{h}",
            m.width(),
            m.height()
        )));
    }
    let mut counts = vec![0usize; w * h];
    for m in masks {
        for (c, &b) in counts.iter_mut().zip(m.as_slice()) {
            *c += b as usize;
        }
    }
    BinaryMask::from_vec(w, h, counts.into_iter().map(|c| c >= k).collect())
}

/// Per-pixel mean of the maps.
pub fn accumulate_heatmap(maps: &[ScoreMap]) -> Result<ScoreMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::validation("heatmap needs at least one score map"))?;
    let (w, h) = first.dims();
    if maps.iter().any(|m| m.dims() != (w, h)) {
        return Err(Error::validation("score maps differ in size"));
    }
    let mut sum = vec![0.0; w * h];
    for m in maps {
        for (s, &v) in sum.iter_mut().zip(m.as_slice()) {
            *s += v;
        }
    }
    let n = maps.len() as f64;
    ScoreMap::from_vec(w, h, sum.into_iter().map(|s| (s / n).clamp(0.0, 1.0)).collect())
}

/// Thresholds each map, votes, and averages the maps into the heatmap.
pub fn fuse_scoremaps(maps: &[ScoreMap], pixel_threshold: f64, k: usize) -> Result<(BinaryMask, ScoreMap)> {
    let masks: Vec<BinaryMask> = maps.iter().map(|m| m.threshold(pixel_threshold)).collect();
    Ok((vote_masks(&masks, k)?, accumulate_heatmap(maps)?))
}

/// Full pipeline on one latent. Without voting only the original rendering
/// is segmented and the mask is its thresholded score map.
pub fn segment(img: &LatentImage, model: &SegFinNet, config: &FusionConfig) -> Result<SegmentationResult> {
    config.validate()?;
    let mut variants = generate_variants(img);
    let k = if config.use_voting {
        config.votes
    } else {
        variants.truncate(1);
        1
    };
    let outputs: Vec<VariantOutput> = variants
        .par_iter()
        .map(|v| variant_scoremap(v, model, config))
        .collect::<Result<_>>()?;
    let maps: Vec<ScoreMap> = outputs.iter().map(|o| o.scores.clone()).collect();
    let (mask, heatmap) = fuse_scoremaps(&maps, config.pixel_threshold, k)?;
    Ok(SegmentationResult {
        mask,
        heatmap,
        instances: outputs[0].instances.clone(),
        variants: outputs,
    })
}
