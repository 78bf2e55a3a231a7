//! Anchor-based detection of fingermarks and examiner attention regions.

mod anchors;
mod backbone;
mod boxes;
mod head;
mod nms;

use serde::{Deserialize, Serialize};

pub use anchors::{generate_anchors, AnchorConfig};
pub use backbone::{image_tensor, Backbone, BackboneConfig, BackboneTrace, MAX_STRIDE};
pub use boxes::{decode, encode, BBox, BoxDelta, MAX_LOG_SCALE};
pub use head::{softmax, HeadOutput, HeadTrace, ProposalHead, NUM_CLASSES};
pub use nms::nms;

use crate::error::{Error, Result};
use crate::imaging::LatentImage;
use crate::model::SegFinNet;
use crate::nn::Tensor3;

/// Foreground classes; background is implicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Fingermark,
    Attention,
}

impl Label {
    /// Index in the classifier output (0 is background).
    pub fn class_index(self) -> usize {
        match self {
            Label::Fingermark => 1,
            Label::Attention => 2,
        }
    }

    /// Index of this class among the mask channels.
    pub fn mask_channel(self) -> usize {
        self.class_index() - 1
    }

    pub fn from_class_index(k: usize) -> Option<Label> {
        match k {
            1 => Some(Label::Fingermark),
            2 => Some(Label::Attention),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    pub stride: usize,
    pub map: Tensor3,
}

/// Pyramid levels ordered by strictly increasing stride.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub levels: Vec<FeatureLevel>,
}

impl FeatureMaps {
    pub fn level(&self, stride: usize) -> Option<&FeatureLevel> {
        self.levels.iter().find(|l| l.stride == stride)
    }

    pub fn low(&self) -> &FeatureLevel {
        &self.levels[0]
    }

    pub fn high(&self) -> &FeatureLevel {
        self.levels.last().expect("at least one level")
    }
}

/// Inference-time detection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Minimum class probability for a detection to be reported.
    pub detection_threshold: f64,
    pub nms_iou: f64,
    /// Cap on candidates entering suppression, highest scores first.
    pub pre_nms_top_n: usize,
    pub max_detections: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            detection_threshold: 0.7,
            nms_iou: 0.5,
            pre_nms_top_n: 600,
            max_detections: 50,
        }
    }
}

fn check_grid(head: &HeadOutput, anchors: &[BBox]) -> Result<()> {
    if anchors.len() != head.num_anchors() {
        return Err(Error::validation(format!(
            "anchor/feature grid mismatch: {} anchors for {}x{} cells x {} shapes",
            anchors.len(),
            head.raw.h,
            head.raw.w,
            head.anchors_per_cell
        )));
    }
    Ok(())
}

/// Decodes every non-background anchor whose winning class probability is at
/// least `min_score`.
pub fn classify_anchors(
    head: &HeadOutput,
    anchors: &[BBox],
    image_w: usize,
    image_h: usize,
    min_score: f64,
) -> Result<Vec<Detection>> {
    check_grid(head, anchors)?;
    let mut out = Vec::new();
    for (i, anchor) in anchors.iter().enumerate() {
        let p = softmax(&head.logits(i));
        let (k, score) = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
        let Some(label) = Label::from_class_index(k) else {
            continue;
        };
        if score < min_score {
            continue;
        }
        let bbox = decode(anchor, &BoxDelta::from_array(head.delta(i)))
            .clip(image_w as f64, image_h as f64);
        if !bbox.is_valid() {
            continue;
        }
        out.push(Detection { bbox, label, score });
    }
    Ok(out)
}

/// Runs the proposal head on the highest pyramid level and returns all
/// non-background anchors, decoded and clipped (no suppression).
pub fn propose_and_classify(
    features: &FeatureMaps,
    anchors: &[BBox],
    head: &ProposalHead,
    image_w: usize,
    image_h: usize,
) -> Result<Vec<Detection>> {
    let (out, _) = head.forward(&features.high().map);
    classify_anchors(&out, anchors, image_w, image_h, 0.0)
}

/// Backbone, proposal head, score filter, then per-class suppression.
pub fn detect(img: &LatentImage, model: &SegFinNet, config: &DetectorConfig) -> Result<Vec<Detection>> {
    let features = model.features(img)?;
    detect_from_features(&features, img.width(), img.height(), model, config)
}

pub fn detect_from_features(
    features: &FeatureMaps,
    image_w: usize,
    image_h: usize,
    model: &SegFinNet,
    config: &DetectorConfig,
) -> Result<Vec<Detection>> {
    let high = features.high();
    let anchors = generate_anchors(high.map.h, high.map.w, &model.config.anchors)?;
    let (out, _) = model.proposals.forward(&high.map);
    out.raw.ensure_finite("proposal_head")?;
    let mut cands = classify_anchors(&out, &anchors, image_w, image_h, config.detection_threshold)?;
    cands.sort_by(|a, b| b.score.total_cmp(&a.score));
    cands.truncate(config.pre_nms_top_n);
    let mut kept = nms(&cands, config.nms_iou);
    kept.truncate(config.max_detections);
    Ok(kept)
}
