//! Per-RoI mask prediction.
//!
//! RoI features are bilinearly sampled at an aspect-preserving resolution and
//! placed in the top-left corner of a zero canvas, fused across two pyramid
//! levels, then upsampled 4x by a stack of dilated transposed convolutions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{BBox, FeatureLevel};
use crate::error::{Error, Result};
use crate::mask::ScoreMap;
use crate::nn::{
    relu, relu_backward, sigmoid, Conv2d, ConvCache, ConvTranspose2d, ConvTransposeCache, Parameters,
    Tensor3,
};

/// Total upsampling factor of the mask head.
pub const UPSAMPLE: usize = 4;

/// Fixed-size, zero-padded RoI feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct RoIFeature {
    /// `channels × canvas × canvas`; zero outside the valid region.
    pub grid: Tensor3,
    pub valid_h: usize,
    pub valid_w: usize,
    pub source_box: BBox,
}

impl RoIFeature {
    pub fn canvas(&self) -> usize {
        self.grid.h
    }
}

/// Where a box lands on a feature level and how it is sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSampling {
    /// Box origin in feature cells.
    pub fx0: f64,
    pub fy0: f64,
    /// Box extent in feature cells.
    pub ext_w: f64,
    pub ext_h: f64,
    pub valid_w: usize,
    pub valid_h: usize,
    pub canvas: usize,
}

impl RoiSampling {
    pub fn new(bbox: &BBox, stride: usize, canvas: usize) -> Result<Self> {
        if canvas < 4 {
            return Err(Error::validation(format!("RoI canvas {canvas} must be at least 4")));
        }
        if !bbox.is_valid() {
            return Err(Error::validation(format!("degenerate RoI box {bbox:?}")));
        }
        let s = stride as f64;
        let (ext_w, ext_h) = (bbox.width() / s, bbox.height() / s);
        if ext_w * ext_h < 1.0 {
            return Err(Error::validation(format!(
                "RoI covers {:.3} feature cells at stride {stride}; need at least 1",
                ext_w * ext_h
            )));
        }
        let short = |a: f64, b: f64| ((canvas as f64 * a / b).round() as usize).clamp(1, canvas);
        let (valid_w, valid_h) = if ext_w >= ext_h {
            (canvas, short(ext_h, ext_w))
        } else {
            (short(ext_w, ext_h), canvas)
        };
        Ok(RoiSampling {
            fx0: bbox.x0 / s,
            fy0: bbox.y0 / s,
            ext_w,
            ext_h,
            valid_w,
            valid_h,
            canvas,
        })
    }

    /// Sample position of canvas cell `(row, col)` in feature index
    /// coordinates (integer = cell centre).
    #[inline]
    pub fn sample_point(&self, row: usize, col: usize) -> (f64, f64) {
        let y = self.fy0 + (row as f64 + 0.5) * self.ext_h / self.valid_h as f64 - 0.5;
        let x = self.fx0 + (col as f64 + 0.5) * self.ext_w / self.valid_w as f64 - 0.5;
        (y, x)
    }
}

/// Bilinear taps for index coordinate `(y, x)` clamped to the grid:
/// `[(offset, weight); 4]` into a `h × w` plane.
#[inline]
pub fn bilinear_taps(h: usize, w: usize, y: f64, x: f64) -> [(usize, f64); 4] {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = (y.floor() as usize).min(h - 1);
    let x0 = (x.floor() as usize).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ly = y - y0 as f64;
    let lx = x - x0 as f64;
    [
        (y0 * w + x0, (1.0 - ly) * (1.0 - lx)),
        (y0 * w + x1, (1.0 - ly) * lx),
        (y1 * w + x0, ly * (1.0 - lx)),
        (y1 * w + x1, ly * lx),
    ]
}

pub fn bilinear_sample(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    bilinear_taps(h, w, y, x)
        .iter()
        .map(|&(i, wt)| plane[i] * wt)
        .sum()
}

/// Aspect-preserving RoI extraction onto a zero `canvas × canvas` grid.
pub fn nonwarp_roialign(level: &FeatureLevel, bbox: &BBox, canvas: usize) -> Result<RoIFeature> {
    let map = &level.map;
    let fmap_box = BBox::new(0.0, 0.0, (map.w * level.stride) as f64, (map.h * level.stride) as f64);
    if bbox.intersection(&fmap_box).is_none() {
        return Err(Error::validation(format!("RoI {bbox:?} does not intersect the image")));
    }
    let s = RoiSampling::new(bbox, level.stride, canvas)?;
    let mut grid = Tensor3::zeros(map.c, canvas, canvas);
    let plane_len = map.h * map.w;
    for r in 0..s.valid_h {
        for c in 0..s.valid_w {
            let (y, x) = s.sample_point(r, c);
            let taps = bilinear_taps(map.h, map.w, y, x);
            for ch in 0..map.c {
                let plane = &map.data[ch * plane_len..(ch + 1) * plane_len];
                let v: f64 = taps.iter().map(|&(i, wt)| plane[i] * wt).sum();
                grid.data[(ch * canvas + r) * canvas + c] = v;
            }
        }
    }
    Ok(RoIFeature {
        grid,
        valid_h: s.valid_h,
        valid_w: s.valid_w,
        source_box: *bbox,
    })
}

/// Scatters an RoI gradient back onto its feature level.
pub fn nonwarp_roialign_backward(
    level_stride: usize,
    g_roi: &Tensor3,
    bbox: &BBox,
    g_level: &mut Tensor3,
) -> Result<()> {
    let canvas = g_roi.h;
    let s = RoiSampling::new(bbox, level_stride, canvas)?;
    let plane_len = g_level.h * g_level.w;
    for r in 0..s.valid_h {
        for c in 0..s.valid_w {
            let (y, x) = s.sample_point(r, c);
            let taps = bilinear_taps(g_level.h, g_level.w, y, x);
            for ch in 0..g_roi.c {
                let g = g_roi.data[(ch * canvas + r) * canvas + c];
                if g == 0.0 {
                    continue;
                }
                for &(i, wt) in &taps {
                    g_level.data[ch * plane_len + i] += g * wt;
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskHeadConfig {
    /// Side of the square RoI canvas in feature cells.
    pub canvas: usize,
    /// Channels after the first and second upsampling layers.
    pub mid_channels: [usize; 2],
    /// Number of mask classes (fingermark, attention).
    pub classes: usize,
}

impl Default for MaskHeadConfig {
    fn default() -> Self {
        MaskHeadConfig {
            canvas: 64,
            mid_channels: [16, 8],
            classes: 2,
        }
    }
}

/// Projection for multi-scale fusion plus the atrous upsampling stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHead {
    pub canvas: usize,
    /// 1×1 projection of the low level into the high level's channels.
    pub project: Conv2d,
    pub up1: ConvTranspose2d,
    pub up2: ConvTranspose2d,
    pub up3: ConvTranspose2d,
}

/// Per-class probabilities on the upsampled canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct RoIMaskSet {
    /// `classes × (4·canvas) × (4·canvas)`
    pub probs: Tensor3,
    /// Valid extents on the upsampled grid.
    pub valid_h: usize,
    pub valid_w: usize,
    pub source_box: BBox,
}

/// One class's probabilities over the valid part of an RoI.
#[derive(Debug, Clone, PartialEq)]
pub struct RoIMask {
    pub width: usize,
    pub height: usize,
    pub probabilities: Vec<f64>,
    pub source_box: BBox,
}

impl RoIMaskSet {
    pub fn class_mask(&self, class: usize) -> RoIMask {
        let side = self.probs.w;
        let plane = self.probs.plane(class);
        let mut p = Vec::with_capacity(self.valid_h * self.valid_w);
        for r in 0..self.valid_h {
            p.extend_from_slice(&plane[r * side..r * side + self.valid_w]);
        }
        RoIMask {
            width: self.valid_w,
            height: self.valid_h,
            probabilities: p,
            source_box: self.source_box,
        }
    }
}

pub struct MaskHeadTrace {
    up1: ConvTransposeCache,
    a1: Tensor3,
    up2: ConvTransposeCache,
    a2: Tensor3,
    up3: ConvTransposeCache,
}

pub struct FuseTrace {
    project: ConvCache,
}

impl MaskHead {
    pub fn new(low_channels: usize, high_channels: usize, cfg: &MaskHeadConfig) -> Self {
        let [m1, m2] = cfg.mid_channels;
        MaskHead {
            canvas: cfg.canvas,
            project: Conv2d::new(low_channels, high_channels, 1, 1, 1).without_bias(),
            up1: ConvTranspose2d::upsampling(high_channels, m1, 3, 2, 1),
            up2: ConvTranspose2d::upsampling(m1, m2, 3, 2, 2),
            up3: ConvTranspose2d::upsampling(m2, cfg.classes, 3, 1, 4),
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.project.init(rng, 1.0);
        self.up1.init(rng, 1.0);
        self.up2.init(rng, 1.0);
        self.up3.init(rng, 0.5);
    }

    pub fn classes(&self) -> usize {
        self.up3.out_c
    }

    pub fn fuse_multiscale(&self, high: &RoIFeature, low: &RoIFeature) -> Result<RoIFeature> {
        Ok(self.fuse_traced(high, low)?.0)
    }

    pub fn fuse_traced(&self, high: &RoIFeature, low: &RoIFeature) -> Result<(RoIFeature, FuseTrace)> {
        if high.canvas() != low.canvas() || high.valid_h != low.valid_h || high.valid_w != low.valid_w {
            return Err(Error::validation(format!(
                "canvas mismatch: high {}x{} (valid {}x{}), low {}x{} (valid {}x{})",
                high.grid.h, high.grid.w, high.valid_h, high.valid_w, low.grid.h, low.grid.w, low.valid_h,
                low.valid_w
            )));
        }
        if low.grid.c != self.project.in_c || high.grid.c != self.project.out_c {
            return Err(Error::validation(format!(
                "fusion expects {} low and {} high channels, got {} and {}",
                self.project.in_c, self.project.out_c, low.grid.c, high.grid.c
            )));
        }
        let (mut grid, project) = self.project.forward(&low.grid);
        grid.add_assign(&high.grid);
        Ok((
            RoIFeature {
                grid,
                valid_h: high.valid_h,
                valid_w: high.valid_w,
                source_box: high.source_box,
            },
            FuseTrace { project },
        ))
    }

    /// Returns the gradient for the low-level RoI block; the high-level
    /// gradient equals `g_fused`.
    pub fn fuse_backward(&self, trace: &FuseTrace, g_fused: &Tensor3, grad: &mut MaskHead) -> Tensor3 {
        self.project.backward(&trace.project, g_fused, &mut grad.project)
    }

    pub fn atrous_upsample(&self, roi: &RoIFeature) -> Result<RoIMaskSet> {
        Ok(self.upsample_traced(roi)?.0)
    }

    pub fn upsample_traced(&self, roi: &RoIFeature) -> Result<(RoIMaskSet, MaskHeadTrace)> {
        let (mut a1, up1) = self.up1.forward(&roi.grid);
        relu(&mut a1);
        a1.ensure_finite("mask_head.up1")?;
        let (mut a2, up2) = self.up2.forward(&a1);
        relu(&mut a2);
        a2.ensure_finite("mask_head.up2")?;
        let (mut z, up3) = self.up3.forward(&a2);
        z.ensure_finite("mask_head.up3")?;
        z.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok((
            RoIMaskSet {
                probs: z,
                valid_h: roi.valid_h * UPSAMPLE,
                valid_w: roi.valid_w * UPSAMPLE,
                source_box: roi.source_box,
            },
            MaskHeadTrace { up1, a1, up2, a2, up3 },
        ))
    }

    /// Back-propagates a gradient w.r.t. the output probabilities and returns
    /// the gradient w.r.t. the input RoI block.
    pub fn upsample_backward(
        &self,
        trace: &MaskHeadTrace,
        probs: &Tensor3,
        g_probs: &Tensor3,
        grad: &mut MaskHead,
    ) -> Tensor3 {
        let mut gz = g_probs.clone();
        for (g, &p) in gz.data.iter_mut().zip(&probs.data) {
            *g *= p * (1.0 - p);
        }
        let mut g2 = self.up3.backward(&trace.up3, &gz, &mut grad.up3);
        relu_backward(&trace.a2, &mut g2);
        let mut g1 = self.up2.backward(&trace.up2, &g2, &mut grad.up2);
        relu_backward(&trace.a1, &mut g1);
        self.up1.backward(&trace.up1, &g1, &mut grad.up1)
    }
}

impl Parameters for MaskHead {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.project.visit(&mut |p, v| f(&format!("project.{p}"), v));
        self.up1.visit(&mut |p, v| f(&format!("up1.{p}"), v));
        self.up2.visit(&mut |p, v| f(&format!("up2.{p}"), v));
        self.up3.visit(&mut |p, v| f(&format!("up3.{p}"), v));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        self.project.visit_mut(&mut |p, v| f(&format!("project.{p}"), v));
        self.up1.visit_mut(&mut |p, v| f(&format!("up1.{p}"), v));
        self.up2.visit_mut(&mut |p, v| f(&format!("up2.{p}"), v));
        self.up3.visit_mut(&mut |p, v| f(&format!("up3.{p}"), v));
    }
}

/// Pixels of a `len`-pixel axis whose centres fall inside `[lo, hi)`.
fn covered_pixels(lo: f64, hi: f64, len: usize) -> std::ops::Range<usize> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).ceil().min(len as f64);
    if last <= first {
        return 0..0;
    }
    first as usize..last as usize
}

/// Resizes an RoI mask onto its box (bilinear, half-pixel centres) inside an
/// otherwise zero `image_w × image_h` map.
pub fn paste_mask(mask: &RoIMask, image_h: usize, image_w: usize) -> ScoreMap {
    let mut out = ScoreMap::zeros(image_w, image_h);
    paste_into(mask, &mut out, false);
    out
}

/// Writes (or max-merges) a pasted RoI mask into `target`.
pub fn paste_into(mask: &RoIMask, target: &mut ScoreMap, merge_max: bool) {
    let b = mask.source_box.clip(target.width() as f64, target.height() as f64);
    if !b.is_valid() || mask.width == 0 || mask.height == 0 {
        return;
    }
    let src = &mask.source_box;
    for py in covered_pixels(b.y0, b.y1, target.height()) {
        let ty = (py as f64 + 0.5 - src.y0) / src.height();
        let v = ty * mask.height as f64 - 0.5;
        for px in covered_pixels(b.x0, b.x1, target.width()) {
            let tx = (px as f64 + 0.5 - src.x0) / src.width();
            let u = tx * mask.width as f64 - 0.5;
            let p = bilinear_sample(&mask.probabilities, mask.height, mask.width, v, u);
            if !merge_max || p > target.get(px, py) {
                target.set(px, py, p);
            }
        }
    }
}
