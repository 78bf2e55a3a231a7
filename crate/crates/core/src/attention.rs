//! Keeps fingermark detections that are covered by examiner attention regions.

use serde::{Deserialize, Serialize};

use crate::detector::{BBox, Detection, Label};
use crate::error::{Error, Result};

pub const DEFAULT_ATTENTION_THRESHOLD: f64 = 0.7;

// Absorbs rounding in the area sums so exact ratios like 0.7 compare as equal.
const RATIO_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionDecision {
    pub detection: Detection,
    pub ratio: f64,
    pub kept: bool,
}

/// Fraction of `bbox` covered by the union of `regions`.
pub fn overlap_ratio(bbox: &BBox, regions: &[BBox]) -> Result<f64> {
    let area = bbox.area();
    if !(area > 0.0) || !bbox.is_valid() {
        return Err(Error::validation(format!(
            "overlap ratio needs a box with positive area, got {bbox:?}"
        )));
    }
    let clipped: Vec<BBox> = regions.iter().filter_map(|r| bbox.intersection(r)).collect();
    Ok((union_area(&clipped) / area).clamp(0.0, 1.0))
}

/// Exact area of a union of rectangles via coordinate compression.
fn union_area(rects: &[BBox]) -> f64 {
    if rects.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.x0, r.x1]).collect();
    let mut ys: Vec<f64> = rects.iter().flat_map(|r| [r.y0, r.y1]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut total = 0.0;
    for xw in xs.windows(2) {
        let xm = 0.5 * (xw[0] + xw[1]);
        for yw in ys.windows(2) {
            let ym = 0.5 * (yw[0] + yw[1]);
            if rects
                .iter()
                .any(|r| r.x0 <= xm && xm < r.x1 && r.y0 <= ym && ym < r.y1)
            {
                total += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    total
}

/// Ratio and keep/drop verdict for every fingermark detection. Attention
/// detections form the region set; without any, every fingermark is kept.
pub fn attention_decisions(detections: &[Detection], threshold: f64) -> Vec<AttentionDecision> {
    let regions: Vec<BBox> = detections
        .iter()
        .filter(|d| d.label == Label::Attention)
        .map(|d| d.bbox)
        .collect();
    detections
        .iter()
        .filter(|d| d.label == Label::Fingermark)
        .map(|d| {
            let ratio = if regions.is_empty() {
                0.0
            } else {
                overlap_ratio(&d.bbox, &regions).unwrap_or(0.0)
            };
            AttentionDecision {
                detection: *d,
                ratio,
                kept: regions.is_empty() || ratio >= threshold - RATIO_TOLERANCE,
            }
        })
        .collect()
}

pub fn filter_by_attention(detections: &[Detection], threshold: f64) -> Vec<Detection> {
    attention_decisions(detections, threshold)
        .into_iter()
        .filter(|d| d.kept)
        .map(|d| d.detection)
        .collect()
}
