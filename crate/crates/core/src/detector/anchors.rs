use serde::{Deserialize, Serialize};

use super::boxes::BBox;
use crate::error::{Error, Result};

/// Anchor tiling over one feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    /// Side length in pixels of the ratio-1 anchor of each scale.
    pub scales: Vec<f64>,
    /// Width over height.
    pub aspect_ratios: Vec<f64>,
    /// Feature-map stride in pixels.
    pub stride: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            scales: vec![8.0, 16.0, 32.0, 64.0, 128.0],
            aspect_ratios: vec![0.5, 1.0, 2.0],
            stride: 8,
        }
    }
}

impl AnchorConfig {
    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.aspect_ratios.is_empty() {
            return Err(Error::validation("anchor scales and aspect ratios must be non-empty"));
        }
        if self.stride == 0 {
            return Err(Error::validation("anchor stride must be positive"));
        }
        if let Some(s) = self
            .scales
            .iter()
            .chain(&self.aspect_ratios)
            .find(|v| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::validation(format!("anchor scale/ratio {s} must be positive")));
        }
        Ok(())
    }

    /// Anchor shapes `(w, h)` for one cell, scale-major.
    pub fn shapes(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.per_cell());
        for &s in &self.scales {
            for &r in &self.aspect_ratios {
                let q = r.sqrt();
                out.push((s * q, s / q));
            }
        }
        out
    }
}

/// One anchor per (cell, scale, ratio), row-major over cells, centred on cell
/// centres in image coordinates.
pub fn generate_anchors(fmap_h: usize, fmap_w: usize, config: &AnchorConfig) -> Result<Vec<BBox>> {
    config.validate()?;
    if fmap_h == 0 || fmap_w == 0 {
        return Err(Error::validation("feature map must have positive size"));
    }
    let shapes = config.shapes();
    let stride = config.stride as f64;
    let mut out = Vec::with_capacity(fmap_h * fmap_w * shapes.len());
    for y in 0..fmap_h {
        let cy = (y as f64 + 0.5) * stride;
        for x in 0..fmap_w {
            let cx = (x as f64 + 0.5) * stride;
            for &(w, h) in &shapes {
                out.push(BBox::from_center(cx, cy, w, h));
            }
        }
    }
    Ok(out)
}
