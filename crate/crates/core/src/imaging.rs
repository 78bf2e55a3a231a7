//! Grayscale latent images and the preprocessed variants used for voting.

use std::path::Path;

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted side length of a latent image.
pub const MIN_SIDE: usize = 32;

/// Single-channel 8-bit latent image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentImage {
    id: String,
    width: usize,
    height: usize,
    /// Scan resolution in pixels per inch.
    ppi: u32,
    pixels: Vec<u8>,
}

impl LatentImage {
    pub fn new(id: impl Into<String>, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::validation(format!(
                "latent image must be at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::validation(format!(
                "pixel buffer of {} values does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(LatentImage {
            id: id.into(),
            width,
            height,
            ppi: 500,
            pixels,
        })
    }

    pub fn filled(id: impl Into<String>, width: usize, height: usize, value: u8) -> Result<Self> {
        LatentImage::new(id, width, height, vec![value; width * height])
    }

    pub fn with_ppi(mut self, ppi: u32) -> Self {
        self.ppi = ppi;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ppi(&self) -> u32 {
        self.ppi
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Same metadata, new pixel buffer of identical size.
    fn with_pixels(&self, pixels: Vec<u8>) -> LatentImage {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        LatentImage {
            pixels,
            ..self.clone()
        }
    }

    pub fn from_dynamic(id: impl Into<String>, img: &DynamicImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::validation(format!("image has zero area ({w}x{h})")));
        }
        let pixels = match img {
            DynamicImage::ImageLuma8(g) => g.as_raw().clone(),
            other => {
                // plain average of the colour channels, alpha ignored
                let rgb = other.to_rgb8();
                rgb.pixels()
                    .map(|p| ((p[0] as u32 + p[1] as u32 + p[2] as u32 + 1) / 3) as u8)
                    .collect()
            }
        };
        LatentImage::new(id, w, h, pixels)
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_image().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Reads an image file as a latent; colour inputs are averaged to gray.
pub fn load_grayscale(path: &Path) -> Result<LatentImage> {
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LatentImage::from_dynamic(id, &img)
}

/// `255 - v` for every pixel.
pub fn invert_pixels(pixels: &[u8]) -> Vec<u8> {
    pixels.iter().map(|&v| 255 - v).collect()
}

/// Shift so the mean becomes 128, then round and clip to `[0, 255]`.
pub fn center_pixels(pixels: &[u8]) -> Vec<u8> {
    if pixels.is_empty() {
        return Vec::new();
    }
    let mean = pixels.iter().map(|&v| v as f64).sum::<f64>() / pixels.len() as f64;
    let shift = 128.0 - mean;
    pixels
        .iter()
        .map(|&v| (v as f64 + shift).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Histogram equalization with minimum-CDF correction.
///
/// `out(v) = round((cdf(v) - cdf_min) / (N - cdf_min) * 255)`. A constant
/// input has `N == cdf_min` and is returned as is.
pub fn equalize_pixels(pixels: &[u8]) -> Vec<u8> {
    let mut hist = [0usize; 256];
    for &v in pixels {
        hist[v as usize] += 1;
    }
    let n = pixels.len();
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = match hist.iter().position(|&h| h > 0) {
        Some(i) => cdf[i],
        None => return Vec::new(),
    };
    if n == cdf_min {
        return pixels.to_vec();
    }
    let denom = (n - cdf_min) as f64;
    let lut: Vec<u8> = cdf
        .iter()
        .map(|&c| ((c.saturating_sub(cdf_min)) as f64 / denom * 255.0).round() as u8)
        .collect();
    pixels.iter().map(|&v| lut[v as usize]).collect()
}

pub fn invert(img: &LatentImage) -> LatentImage {
    img.with_pixels(invert_pixels(&img.pixels))
}

pub fn center_normalize(img: &LatentImage) -> LatentImage {
    img.with_pixels(center_pixels(&img.pixels))
}

pub fn histogram_equalize(img: &LatentImage) -> LatentImage {
    img.with_pixels(equalize_pixels(&img.pixels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Original,
    Centered,
    Equalized,
    Inverted,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::Original,
        VariantKind::Centered,
        VariantKind::Equalized,
        VariantKind::Inverted,
    ];

    pub fn apply(self, img: &LatentImage) -> LatentImage {
        match self {
            VariantKind::Original => img.clone(),
            VariantKind::Centered => center_normalize(img),
            VariantKind::Equalized => histogram_equalize(img),
            VariantKind::Inverted => invert(img),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayscaleVariant {
    pub kind: VariantKind,
    pub image: LatentImage,
}

/// The four voters, always in the order original, centered, equalized, inverted.
pub fn generate_variants(img: &LatentImage) -> Vec<GrayscaleVariant> {
    VariantKind::ALL
        .iter()
        .map(|&kind| GrayscaleVariant {
            kind,
            image: kind.apply(img),
        })
        .collect()
}

/// Grayscale to RGB, for overlays.
pub fn to_rgb(img: &LatentImage) -> image::RgbImage {
    image::RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let v = img.get(x as usize, y as usize);
        image::Rgb([v, v, v])
    })
}
