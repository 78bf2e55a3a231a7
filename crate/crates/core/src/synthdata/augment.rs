//! Random rotation, translation, scaling and cropping applied jointly to an
//! image, its mask and its attention regions.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GroundTruthSample;
use crate::error::{Error, Result};
use crate::imaging::LatentImage;
use crate::mask::BinaryMask;

const MAX_ROTATION: f64 = 30.0 * PI / 180.0;
const MAX_SHIFT: f64 = 0.15;
const SCALE_RANGE: (f64, f64) = (0.8, 1.25);
const MIN_CROP_AREA: f64 = 0.75;
const MIN_FOREGROUND: f64 = 0.02;
const MAX_TRIES: usize = 10;

/// Geometry of one augmentation. The image is rotated by `rotation` and
/// scaled by `scale` about its centre, shifted by `shift` pixels, and the
/// `crop` window `[x0, y0, w, h]` is then resized back to the full size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: f64,
    pub scale: f64,
    pub shift: (f64, f64),
    pub crop: [f64; 4],
}

impl Transform {
    pub fn identity(width: usize, height: usize) -> Self {
        Transform {
            rotation: 0.0,
            scale: 1.0,
            shift: (0.0, 0.0),
            crop: [0.0, 0.0, width as f64, height as f64],
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let side = rng.gen_range(MIN_CROP_AREA..=1.0f64).sqrt();
        let (cw, ch) = (side * w, side * h);
        Transform {
            rotation: rng.gen_range(-MAX_ROTATION..=MAX_ROTATION),
            scale: (rng.gen_range(SCALE_RANGE.0.ln()..=SCALE_RANGE.1.ln())).exp(),
            shift: (
                rng.gen_range(-MAX_SHIFT..=MAX_SHIFT) * w,
                rng.gen_range(-MAX_SHIFT..=MAX_SHIFT) * h,
            ),
            crop: [rng.gen_range(0.0..=w - cw), rng.gen_range(0.0..=h - ch), cw, ch],
        }
    }

    /// Source position of an output position (continuous pixel coordinates).
    pub fn to_source(&self, x: f64, y: f64, width: usize, height: usize) -> (f64, f64) {
        let (w, h) = (width as f64, height as f64);
        let qx = self.crop[0] + x * self.crop[2] / w - 0.5 * w - self.shift.0;
        let qy = self.crop[1] + y * self.crop[3] / h - 0.5 * h - self.shift.1;
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        (
            0.5 * w + (c * qx + s * qy) / self.scale,
            0.5 * h + (-s * qx + c * qy) / self.scale,
        )
    }

    /// Output position of a source position; inverse of [`Transform::to_source`].
    pub fn to_output(&self, x: f64, y: f64, width: usize, height: usize) -> (f64, f64) {
        let (w, h) = (width as f64, height as f64);
        let (dx, dy) = (x - 0.5 * w, y - 0.5 * h);
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let qx = 0.5 * w + self.shift.0 + self.scale * (c * dx - s * dy);
        let qy = 0.5 * h + self.shift.1 + self.scale * (s * dx + c * dy);
        (
            (qx - self.crop[0]) * w / self.crop[2],
            (qy - self.crop[1]) * h / self.crop[3],
        )
    }
}

fn border_mean(img: &LatentImage) -> u8 {
    let (w, h) = (img.width(), img.height());
    let mut sum = 0u64;
    let mut n = 0u64;
    for x in 0..w {
        sum += img.get(x, 0) as u64 + img.get(x, h - 1) as u64;
        n += 2;
    }
    for y in 1..h - 1 {
        sum += img.get(0, y) as u64 + img.get(w - 1, y) as u64;
        n += 2;
    }
    ((sum + n / 2) / n) as u8
}

/// Moves a box through the transform by mapping its inscribed ellipse.
fn transform_region(r: &[u32; 4], t: &Transform, w: usize, h: usize) -> Option<[u32; 4]> {
    let cx = 0.5 * (r[0] + r[2]) as f64;
    let cy = 0.5 * (r[1] + r[3]) as f64;
    let rx = 0.5 * (r[2] - r[0]) as f64;
    let ry = 0.5 * (r[3] - r[1]) as f64;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..64 {
        let a = i as f64 * PI / 32.0;
        let (px, py) = match i {
            0 => (cx + rx, cy),
            16 => (cx, cy + ry),
            32 => (cx - rx, cy),
            48 => (cx, cy - ry),
            _ => (cx + rx * a.cos(), cy + ry * a.sin()),
        };
        let (ox, oy) = t.to_output(px, py, w, h);
        x0 = x0.min(ox);
        y0 = y0.min(oy);
        x1 = x1.max(ox);
        y1 = y1.max(oy);
    }
    let full = (x1 - x0) * (y1 - y0);
    let c = |v: f64, hi: usize| v.round().clamp(0.0, hi as f64) as u32;
    let b = [c(x0, w), c(y0, h), c(x1, w), c(y1, h)];
    if b[2] < b[0] + 4 || b[3] < b[1] + 4 {
        return None;
    }
    let kept = ((b[2] - b[0]) as f64) * ((b[3] - b[1]) as f64);
    (kept >= 0.5 * full).then_some(b)
}

/// Applies `t` to a sample: bilinear for the image (uncovered pixels take the
/// border mean), nearest neighbour for the mask.
pub fn apply_transform(sample: &GroundTruthSample, t: &Transform) -> Result<GroundTruthSample> {
    let img = &sample.image;
    let (w, h) = (img.width(), img.height());
    let fill = border_mean(img) as f64;
    let mut pixels = Vec::with_capacity(w * h);
    let mut mask = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = t.to_source(x as f64 + 0.5, y as f64 + 0.5, w, h);
            let (u, v) = (sx - 0.5, sy - 0.5);
            let value = if u < -0.5 || v < -0.5 || u > w as f64 - 0.5 || v > h as f64 - 0.5 {
                fill
            } else {
                let (u, v) = (u.clamp(0.0, (w - 1) as f64), v.clamp(0.0, (h - 1) as f64));
                let (x0, y0) = (u.floor() as usize, v.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (u - x0 as f64, v - y0 as f64);
                let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
                let bot = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
                top * (1.0 - fy) + bot * fy
            };
            pixels.push(value.round().clamp(0.0, 255.0) as u8);
            if sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64 {
                mask.set(x, y, sample.mask.get(sx as usize, sy as usize));
            }
        }
    }
    let attention_regions = sample
        .attention_regions
        .iter()
        .filter_map(|r| transform_region(r, t, w, h))
        .collect();
    Ok(GroundTruthSample {
        image: LatentImage::new(img.id(), w, h, pixels)?.with_ppi(img.ppi()),
        mask,
        attention_regions,
        seed: sample.seed,
    })
}

/// Random geometric augmentation, deterministic in `seed`. Draws leaving
/// less than 2% foreground are redrawn up to ten times.
pub fn augment(sample: &GroundTruthSample, seed: u64) -> Result<GroundTruthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (sample.image.width(), sample.image.height());
    for _ in 0..MAX_TRIES {
        let t = Transform::random(&mut rng, w, h);
        let out = apply_transform(sample, &t)?;
        if out.mask.foreground_fraction() >= MIN_FOREGROUND {
            return Ok(out);
        }
    }
    Err(Error::validation(format!(
        "{}: augmentation left under {}% foreground after {MAX_TRIES} draws",
        sample.id(),
        MIN_FOREGROUND * 100.0
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{synth_latent, SynthParams};
    use proptest::prelude::*;
    use rand::Rng;

    fn marked() -> GroundTruthSample {
        let p = SynthParams {
            marker_probability: 1.0,
            ..SynthParams::default()
        };
        synth_latent(&p, 21).unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let s = marked();
        let out = apply_transform(&s, &Transform::identity(256, 256)).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn quarter_turn_preserves_area() {
        let s = marked();
        let t = Transform {
            rotation: PI / 2.0,
            ..Transform::identity(256, 256)
        };
        let out = apply_transform(&s, &t).unwrap();
        let (a, b) = (s.mask.count() as f64, out.mask.count() as f64);
        assert!((a - b).abs() <= 0.02 * a);
    }

    #[test]
    fn mapping_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = Transform::random(&mut rng, 200, 160);
            let (x, y) = (rng.gen_range(0.0..200.0), rng.gen_range(0.0..160.0));
            let (sx, sy) = t.to_source(x, y, 200, 160);
            let (bx, by) = t.to_output(sx, sy, 200, 160);
            assert!((bx - x).abs() < 1e-9 && (by - y).abs() < 1e-9);
        }
    }

    #[test]
    fn hopeless_sample_errors() {
        let mut s = marked();
        s.mask = BinaryMask::new(256, 256);
        assert!(augment(&s, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn foreground_maps_back_into_foreground(seed in 0u64..1000) {
            let s = marked();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = Transform::random(&mut rng, 256, 256);
            let out = apply_transform(&s, &t).unwrap();
            prop_assert_eq!(out.image.width(), 256);
            prop_assert_eq!(out.mask.dims(), (256, 256));
            let mut total = 0usize;
            let mut good = 0usize;
            for y in 0..256 {
                for x in 0..256 {
                    if !out.mask.get(x, y) {
                        continue;
                    }
                    total += 1;
                    let (sx, sy) = t.to_source(x as f64 + 0.5, y as f64 + 0.5, 256, 256);
                    let near = (-1i64..=1).any(|dy| (-1i64..=1).any(|dx| {
                        let (ix, iy) = (sx.floor() as i64 + dx, sy.floor() as i64 + dy);
                        (0..256).contains(&ix) && (0..256).contains(&iy) && s.mask.get(ix as usize, iy as usize)
                    }));
                    good += near as usize;
                }
            }
            prop_assert!(good as f64 >= 0.99 * total as f64);
            let again = augment(&s, seed).unwrap();
            prop_assert_eq!(again, augment(&s, seed).unwrap());
        }
    }
}
