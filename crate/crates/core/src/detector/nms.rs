use std::cmp::Ordering;

use super::{BBox, Detection};

/// Total order used for suppression: score descending, then larger area,
/// then lexicographic coordinates.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.bbox.area().total_cmp(&a.bbox.area()))
        .then_with(|| coords(&a.bbox).partial_cmp(&coords(&b.bbox)).unwrap_or(Ordering::Equal))
        .then_with(|| a.label.cmp(&b.label))
}

fn coords(b: &BBox) -> [f64; 4] {
    [b.x0, b.y0, b.x1, b.y1]
}

/// Greedy per-class non-maximum suppression.
///
/// Surviving same-class pairs have IoU below `iou_threshold`. The output is
/// sorted by the suppression order and does not depend on input order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = detections.to_vec();
    sorted.sort_by(rank);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.label == d.label && k.bbox.iou(&d.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}
