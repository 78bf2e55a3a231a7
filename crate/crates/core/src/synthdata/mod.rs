//! Synthetic latent fingerprints with exact ground truth.
//!
//! Each fingermark is a ridge pattern confined to a perturbed elliptical
//! support over a noisy, cluttered background. Some fingermarks are circled
//! by a dark marker stroke whose bounding box becomes an attention region.

mod augment;
mod dataset;

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{apply_transform, augment, Transform};
pub use dataset::{generate_dataset, load_dataset, load_eval_set, sample_seed, write_dataset, EvalEntry, Manifest};

use crate::error::{Error, Result};
use crate::imaging::LatentImage;
use crate::mask::BinaryMask;
use crate::nn::normal_sample;

/// Width in pixels of the marker band labelled as attention in training targets.
pub const ATTENTION_BAND: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub image_size: usize,
    pub ridge_period: f64,
    pub n_fingermarks: usize,
    pub clutter_level: f64,
    pub marker_probability: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            image_size: 256,
            ridge_period: 9.0,
            n_fingermarks: 1,
            clutter_level: 0.5,
            marker_probability: 0.5,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 128 {
            return Err(Error::validation(format!("image_size must be >= 128, got {}", self.image_size)));
        }
        if !(self.ridge_period >= 4.0) {
            return Err(Error::validation(format!("ridge_period must be >= 4, got {}", self.ridge_period)));
        }
        if !(1..=3).contains(&self.n_fingermarks) {
            return Err(Error::validation(format!(
                "n_fingermarks must be 1..=3, got {}",
                self.n_fingermarks
            )));
        }
        for (name, v) in [("clutter_level", self.clutter_level), ("marker_probability", self.marker_probability)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSample {
    pub image: LatentImage,
    pub mask: BinaryMask,
    /// Integer boxes `[x0, y0, x1, y1)`.
    pub attention_regions: Vec<[u32; 4]>,
    pub seed: u64,
}

impl GroundTruthSample {
    pub fn id(&self) -> &str {
        self.image.id()
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.image.width(), self.image.height());
        if self.mask.dims() != (w, h) {
            return Err(Error::validation(format!(
                "{}: mask {}x{} does not match image {w}x{h}",
                self.id(),
                self.mask.width(),
                self.mask.height()
            )));
        }
        for r in &self.attention_regions {
            if r[0] >= r[2] || r[1] >= r[3] || r[2] as usize > w || r[3] as usize > h {
                return Err(Error::validation(format!("{}: attention region {r:?} out of bounds", self.id())));
            }
        }
        Ok(())
    }

    /// Per-pixel training labels: 0 background, 1 fingermark, 2 the band just
    /// inside each attention region's inscribed ellipse (the marker stroke).
    pub fn label_map(&self) -> Vec<u8> {
        let (w, h) = (self.image.width(), self.image.height());
        let mut labels: Vec<u8> = self.mask.as_slice().iter().map(|&b| b as u8).collect();
        for r in &self.attention_regions {
            let cx = 0.5 * (r[0] + r[2]) as f64;
            let cy = 0.5 * (r[1] + r[3]) as f64;
            let rx = 0.5 * (r[2] - r[0]) as f64;
            let ry = 0.5 * (r[3] - r[1]) as f64;
            let inner = (1.0 - ATTENTION_BAND / rx.min(ry)).max(0.0);
            for y in r[1] as usize..(r[3] as usize).min(h) {
                for x in r[0] as usize..(r[2] as usize).min(w) {
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    let rho = (dx * dx + dy * dy).sqrt();
                    let i = y * w + x;
                    if rho <= 1.0 && rho >= inner && labels[i] == 0 {
                        labels[i] = 2;
                    }
                }
            }
        }
        labels
    }
}

#[derive(Debug, Clone, Copy)]
enum Pattern {
    Whorl { cu: f64, cv: f64, squash: f64 },
    Arch { height: f64, width: f64 },
}

#[derive(Debug, Clone)]
struct Print {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    /// Boundary harmonics `(amplitude, order, phase)`.
    wobble: [(f64, f64, f64); 3],
    pattern: Pattern,
    warp: (f64, f64, f64, f64),
    depth: f64,
    fade: (f64, f64, f64),
    marker: Option<Marker>,
}

#[derive(Debug, Clone, Copy)]
struct Marker {
    /// Semi-axes of the axis-aligned stroke ellipse.
    ax: f64,
    ay: f64,
    width: f64,
    level: f64,
}

impl Print {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy)
    }

    fn boundary(&self, phi: f64) -> f64 {
        1.0 + self.wobble.iter().map(|&(amp, k, p)| amp * (k * phi + p).sin()).sum::<f64>()
    }

    /// Largest boundary radius factor.
    fn max_boundary(&self) -> f64 {
        1.0 + self.wobble.iter().map(|w| w.0.abs()).sum::<f64>()
    }

    fn phase(&self, u: f64, v: f64, period: f64) -> f64 {
        let (wa, wf, wg, wp) = self.warp;
        let base = match self.pattern {
            Pattern::Whorl { cu, cv, squash } => ((u - cu).powi(2) + ((v - cv) * squash).powi(2)).sqrt(),
            Pattern::Arch { height, width } => v - height * (-(u * u) / (2.0 * width * width)).exp(),
        };
        2.0 * PI * base / period + wa * (wf * u + wg * v + wp).sin()
    }

    /// Half extents of the (perturbed) support along the image axes.
    fn half_extents(&self) -> (f64, f64) {
        let k = self.max_boundary();
        let hx = ((self.a * self.cos).powi(2) + (self.b * self.sin).powi(2)).sqrt();
        let hy = ((self.a * self.sin).powi(2) + (self.b * self.cos).powi(2)).sqrt();
        (hx * k, hy * k)
    }
}

fn draw_print(rng: &mut ChaCha8Rng, params: &SynthParams, size_scale: f64) -> Print {
    let a = rng.gen_range(40.0..64.0) * size_scale;
    let b = a * rng.gen_range(0.7..1.0);
    let theta = rng.gen_range(0.0..PI);
    let mut wobble = [(0.0, 0.0, 0.0); 3];
    for (i, w) in wobble.iter_mut().enumerate() {
        *w = (rng.gen_range(-0.04..0.04), (i + 2) as f64, rng.gen_range(0.0..2.0 * PI));
    }
    let pattern = if rng.gen_bool(0.5) {
        Pattern::Whorl {
            cu: rng.gen_range(-0.25..0.25) * a,
            cv: rng.gen_range(-0.25..0.25) * b,
            squash: rng.gen_range(1.0..1.4),
        }
    } else {
        Pattern::Arch {
            height: rng.gen_range(0.2..0.5) * b,
            width: rng.gen_range(0.3..0.6) * a,
        }
    };
    let wf = 2.0 * PI / rng.gen_range(60.0..140.0);
    let warp = (
        rng.gen_range(0.5..1.5),
        wf * rng.gen_range(-1.0..1.0),
        wf * rng.gen_range(-1.0..1.0),
        rng.gen_range(0.0..2.0 * PI),
    );
    let ff = 2.0 * PI / rng.gen_range(50.0..120.0);
    let mut p = Print {
        cx: 0.0,
        cy: 0.0,
        a,
        b,
        cos: theta.cos(),
        sin: theta.sin(),
        wobble,
        pattern,
        warp,
        depth: rng.gen_range(45.0..85.0),
        fade: (ff * rng.gen_range(-1.0..1.0), ff * rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)),
        marker: None,
    };
    if rng.gen_bool(params.marker_probability) {
        let (hx, hy) = p.half_extents();
        // Smallest axis-aligned ellipse with hx:hy proportions around the support.
        let mut k: f64 = 1.0;
        for i in 0..360 {
            let phi = i as f64 * PI / 180.0;
            let r = p.boundary(phi);
            let (u, v) = (p.a * r * phi.cos(), p.b * r * phi.sin());
            let x = p.cos * u - p.sin * v;
            let y = p.sin * u + p.cos * v;
            k = k.max(((x / hx).powi(2) + (y / hy).powi(2)).sqrt());
        }
        let margin = rng.gen_range(10.0..16.0) * size_scale.max(0.75);
        p.marker = Some(Marker {
            ax: k * hx + margin,
            ay: k * hy + margin,
            width: rng.gen_range(3.0..4.5),
            level: rng.gen_range(20.0..60.0),
        });
    }
    p
}

/// Half extents the print needs to stay inside the image.
fn footprint(p: &Print) -> (f64, f64) {
    match p.marker {
        Some(m) => (m.ax + m.width, m.ay + m.width),
        None => {
            let (hx, hy) = p.half_extents();
            (hx * 0.9, hy * 0.9)
        }
    }
}

fn place_prints(rng: &mut ChaCha8Rng, prints: &mut [Print], size: f64) {
    for i in 0..prints.len() {
        let (fx, fy) = footprint(&prints[i]);
        let (lo_x, hi_x) = ((fx + 2.0).min(size / 2.0), (size - fx - 2.0).max(size / 2.0));
        let (lo_y, hi_y) = ((fy + 2.0).min(size / 2.0), (size - fy - 2.0).max(size / 2.0));
        let mut best = (size / 2.0, size / 2.0, f64::NEG_INFINITY);
        for _ in 0..40 {
            let cx = if hi_x > lo_x { rng.gen_range(lo_x..hi_x) } else { lo_x };
            let cy = if hi_y > lo_y { rng.gen_range(lo_y..hi_y) } else { lo_y };
            let gap = prints[..i]
                .iter()
                .map(|q| ((q.cx - cx).powi(2) + (q.cy - cy).powi(2)).sqrt() - q.a.max(q.b))
                .fold(f64::INFINITY, f64::min);
            if gap > best.2 {
                best = (cx, cy, gap);
            }
            if gap >= prints[i].a.max(prints[i].b) {
                break;
            }
        }
        prints[i].cx = best.0;
        prints[i].cy = best.1;
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn paint_background(rng: &mut ChaCha8Rng, params: &SynthParams, canvas: &mut [f64]) {
    let n = params.image_size;
    let half = n as f64 / 2.0;
    let base = rng.gen_range(150.0..210.0);
    let ang = rng.gen_range(0.0..2.0 * PI);
    let ramp = rng.gen_range(0.0..30.0);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let f = 2.0 * PI / rng.gen_range(40.0..160.0);
            let t = rng.gen_range(0.0..PI);
            (f * t.cos(), f * t.sin(), rng.gen_range(0.0..2.0 * PI), rng.gen_range(2.0..6.0))
        })
        .collect();
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 - half, y as f64 - half);
            let mut v = base + ramp * (fx * ang.cos() + fy * ang.sin()) / half;
            for &(kx, ky, p, amp) in &waves {
                v += amp * (1.0 + params.clutter_level) * (kx * fx + ky * fy + p).sin();
            }
            canvas[y * n + x] = v;
        }
    }
    let c = params.clutter_level;
    let lines = (c * 6.0 + rng.gen::<f64>()).floor() as usize;
    for _ in 0..lines {
        let (x0, y0) = (rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64));
        let (x1, y1) = (rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64));
        let width = rng.gen_range(1.0..3.0);
        let dark = rng.gen_range(25.0..70.0);
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len2 = (dx * dx + dy * dy).max(1e-9);
        for y in 0..n {
            for x in 0..n {
                let (px, py) = (x as f64 + 0.5 - x0, y as f64 + 0.5 - y0);
                let t = ((px * dx + py * dy) / len2).clamp(0.0, 1.0);
                let d = ((px - t * dx).powi(2) + (py - t * dy).powi(2)).sqrt();
                let cov = (width / 2.0 + 0.5 - d).clamp(0.0, 1.0);
                canvas[y * n + x] -= dark * cov;
            }
        }
    }
    let blobs = (c * 5.0 + rng.gen::<f64>()).floor() as usize;
    for _ in 0..blobs {
        let (bx, by) = (rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64));
        let (sx, sy) = (rng.gen_range(6.0..30.0), rng.gen_range(6.0..30.0));
        let amp = rng.gen_range(15.0..45.0) * if rng.gen_bool(0.7) { -1.0 } else { 1.0 };
        for y in 0..n {
            for x in 0..n {
                let r2 = ((x as f64 - bx) / sx).powi(2) + ((y as f64 - by) / sy).powi(2);
                if r2 < 16.0 {
                    canvas[y * n + x] += amp * (-0.5 * r2).exp();
                }
            }
        }
    }
}

fn paint_print(p: &Print, period: f64, n: usize, canvas: &mut [f64], mask: &mut BinaryMask) {
    let (hx, hy) = p.half_extents();
    let x_range = ((p.cx - hx - 1.0).floor().max(0.0) as usize)..((p.cx + hx + 2.0).ceil().min(n as f64) as usize);
    let y_range = ((p.cy - hy - 1.0).floor().max(0.0) as usize)..((p.cy + hy + 2.0).ceil().min(n as f64) as usize);
    let edge = 3.0 / p.a.min(p.b);
    for y in y_range {
        for x in x_range.clone() {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let (u, v) = p.local(xf, yf);
            let (nu, nv) = (u / p.a, v / p.b);
            let rho = (nu * nu + nv * nv).sqrt();
            let limit = p.boundary(nv.atan2(nu));
            if rho >= limit {
                continue;
            }
            mask.set(x, y, true);
            let fade_in = ((limit - rho) / edge).min(1.0);
            let contrast = 0.55 + 0.45 * (0.5 + 0.5 * (p.fade.0 * xf + p.fade.1 * yf + p.fade.2).sin());
            let ridge = sigmoid(4.0 * p.phase(u, v, period).cos());
            canvas[y * n + x] -= p.depth * fade_in * contrast * ridge;
        }
    }
}

/// Draws the stroke and returns its pixel bounding box.
fn paint_marker(p: &Print, m: &Marker, n: usize, canvas: &mut [f64]) -> Option<[u32; 4]> {
    let reach = m.width;
    let x_range = ((p.cx - m.ax - reach).floor().max(0.0) as usize)..((p.cx + m.ax + reach).ceil().min(n as f64) as usize);
    let y_range = ((p.cy - m.ay - reach).floor().max(0.0) as usize)..((p.cy + m.ay + reach).ceil().min(n as f64) as usize);
    let mut bb: Option<[u32; 4]> = None;
    for y in y_range {
        for x in x_range.clone() {
            let dx = x as f64 + 0.5 - p.cx;
            let dy = y as f64 + 0.5 - p.cy;
            let rho = ((dx / m.ax).powi(2) + (dy / m.ay).powi(2)).sqrt();
            if rho == 0.0 {
                continue;
            }
            let grad = ((dx / (m.ax * m.ax)).powi(2) + (dy / (m.ay * m.ay)).powi(2)).sqrt() / rho;
            let d = (rho - 1.0) / grad;
            let cov = (m.width / 2.0 + 0.5 - d.abs()).clamp(0.0, 1.0);
            if cov <= 0.0 {
                continue;
            }
            let i = y * n + x;
            canvas[i] = canvas[i] * (1.0 - cov) + m.level * cov;
            let b = bb.get_or_insert([x as u32, y as u32, x as u32 + 1, y as u32 + 1]);
            b[0] = b[0].min(x as u32);
            b[1] = b[1].min(y as u32);
            b[2] = b[2].max(x as u32 + 1);
            b[3] = b[3].max(y as u32 + 1);
        }
    }
    bb
}

/// One synthetic latent; a pure function of `(params, seed)`.
pub fn synth_latent(params: &SynthParams, seed: u64) -> Result<GroundTruthSample> {
    synth_latent_with_id(params, seed, format!("synth_{seed:016x}"))
}

pub fn synth_latent_with_id(params: &SynthParams, seed: u64, id: impl Into<String>) -> Result<GroundTruthSample> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.image_size;
    let mut canvas = vec![0.0; n * n];
    paint_background(&mut rng, params, &mut canvas);
    let size_scale = n as f64 / 256.0 * if params.n_fingermarks > 1 { 0.8 } else { 1.0 };
    let mut prints: Vec<Print> = (0..params.n_fingermarks)
        .map(|_| draw_print(&mut rng, params, size_scale))
        .collect();
    place_prints(&mut rng, &mut prints, n as f64);
    let mut mask = BinaryMask::new(n, n);
    for p in &prints {
        paint_print(p, params.ridge_period, n, &mut canvas, &mut mask);
    }
    let mut attention_regions = Vec::new();
    for p in &prints {
        if let Some(m) = &p.marker {
            if let Some(bb) = paint_marker(p, m, n, &mut canvas) {
                attention_regions.push(bb);
            }
        }
    }
    let sigma = 4.0 + 8.0 * params.clutter_level;
    let pixels = canvas
        .iter()
        .map(|&v| (v + sigma * normal_sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
        .collect();
    let sample = GroundTruthSample {
        image: LatentImage::new(id, n, n, pixels)?,
        mask,
        attention_regions,
        seed,
    };
    sample.validate()?;
    Ok(sample)
}
