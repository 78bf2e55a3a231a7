//! Colour renderings for inspection: mask boundary in red, optional heatmap.

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::imaging::{to_rgb, LatentImage};
use crate::mask::{BinaryMask, ScoreMap};

const BOUNDARY: Rgb<u8> = Rgb([255, 0, 0]);
const HEAT_ALPHA: f64 = 0.5;

/// Foreground pixels with a 4-neighbour outside the mask or the image.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1))
    })
}

/// Blue to red through green and yellow.
fn heat_colour(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [255.0 * r, 255.0 * g, 255.0 * b]
}

pub fn render_overlay(img: &LatentImage, mask: &BinaryMask, heatmap: Option<&ScoreMap>) -> Result<RgbImage> {
    let dims = (img.width(), img.height());
    if mask.dims() != dims {
        return Err(Error::validation(format!(
            "mask is {}x{} but image is {}x{}",
            mask.width(),
            mask.height(),
            dims.0,
            dims.1
        )));
    }
    let mut out = to_rgb(img);
    if let Some(heat) = heatmap {
        if heat.dims() != dims {
            let (hw, hh) = heat.dims();
            return Err(Error::validation(format!(
                "heatmap is {hw}x{hh} but image is {}x{}",
                dims.0, dims.1
            )));
        }
        for (x, y, px) in out.enumerate_pixels_mut() {
            let c = heat_colour(heat.get(x as usize, y as usize));
            for k in 0..3 {
                px.0[k] = ((1.0 - HEAT_ALPHA) * px.0[k] as f64 + HEAT_ALPHA * c[k]).round() as u8;
            }
        }
    }
    let edge = boundary(mask);
    for (x, y, px) in out.enumerate_pixels_mut() {
        if edge.get(x as usize, y as usize) {
            *px = BOUNDARY;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> LatentImage {
        LatentImage::new("t", 40, 36, (0..40 * 36).map(|i| (i % 251) as u8).collect()).unwrap()
    }

    #[test]
    fn full_mask_outlines_border() {
        let m = BinaryMask::from_fn(40, 36, |_, _| true);
        let out = render_overlay(&img(), &m, None).unwrap();
        for (x, y, px) in out.enumerate_pixels() {
            let border = x == 0 || y == 0 || x == 39 || y == 35;
            assert_eq!(*px == BOUNDARY, border, "({x}, {y})");
        }
    }

    #[test]
    fn empty_mask_is_plain_gray() {
        let out = render_overlay(&img(), &BinaryMask::new(40, 36), None).unwrap();
        assert_eq!(out, to_rgb(&img()));
    }

    #[test]
    fn heatmap_size_checked() {
        let m = BinaryMask::new(40, 36);
        assert!(render_overlay(&img(), &m, Some(&ScoreMap::zeros(39, 36))).is_err());
        assert!(render_overlay(&img(), &BinaryMask::new(40, 35), None).is_err());
        let hot = render_overlay(&img(), &m, Some(&ScoreMap::zeros(40, 36))).unwrap();
        assert_ne!(hot, to_rgb(&img()));
    }

    #[test]
    fn heat_colour_ends() {
        assert_eq!(heat_colour(0.0), [0.0, 0.0, 127.5]);
        assert_eq!(heat_colour(1.0), [127.5, 0.0, 0.0]);
    }
}
