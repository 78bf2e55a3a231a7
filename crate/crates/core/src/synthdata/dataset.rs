//! On-disk dataset layout:
//!
//! ```text
//! <root>/images/<id>.png     8-bit grayscale latent
//! <root>/masks/<id>.png      ground truth, 0 and 255 only
//! <root>/attention/<id>.json list of [x0, y0, x1, y1] boxes
//! <root>/manifest.json       ordered ids, generator params, seeds
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{synth_latent_with_id, GroundTruthSample, SynthParams};
use crate::error::{Error, Result};
use crate::imaging::{load_grayscale, LatentImage};
use crate::mask::BinaryMask;

const SUBDIRS: [&str; 3] = ["images", "masks", "attention"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SynthParams>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

/// Per-sample seed derived from a dataset seed (SplitMix64 finaliser).
pub fn sample_seed(dataset_seed: u64, index: usize) -> u64 {
    let mut z = dataset_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` samples with ids `latent_00000`, `latent_00001`, ...
pub fn generate_dataset(params: &SynthParams, count: usize, seed: u64) -> Result<Vec<GroundTruthSample>> {
    (0..count)
        .map(|i| synth_latent_with_id(params, sample_seed(seed, i), format!("latent_{i:05}")))
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(
    samples: &[GroundTruthSample],
    dir: &Path,
    params: Option<&SynthParams>,
) -> Result<Manifest> {
    for sub in SUBDIRS {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for s in samples {
        s.validate()?;
        s.image.save(&dir.join("images").join(format!("{}.png", s.id())))?;
        s.mask.save(&dir.join("masks").join(format!("{}.png", s.id())))?;
        write_json(&dir.join("attention").join(format!("{}.json", s.id())), &s.attention_regions)?;
    }
    let manifest = Manifest {
        ids: samples.iter().map(|s| s.id().to_string()).collect(),
        params: params.cloned(),
        seeds: samples.iter().map(|s| s.seed).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("dataset directory {} does not exist", dir.display())));
    }
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return Err(Error::Dataset(format!("{} has no manifest.json", dir.display())));
    }
    let manifest: Manifest = read_json(&path)?;
    if !manifest.seeds.is_empty() && manifest.seeds.len() != manifest.ids.len() {
        return Err(Error::Dataset(format!(
            "{}: {} seeds for {} ids",
            path.display(),
            manifest.seeds.len(),
            manifest.ids.len()
        )));
    }
    Ok(manifest)
}

fn require_dir(dir: &Path, sub: &str) -> Result<PathBuf> {
    let p = dir.join(sub);
    if !p.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset {} is missing the {sub}/ folder",
            dir.display()
        )));
    }
    Ok(p)
}

fn load_regions(path: &Path) -> Result<Vec<[u32; 4]>> {
    if path.is_file() {
        read_json(path)
    } else {
        Ok(Vec::new())
    }
}

fn load_image(dir: &Path, id: &str) -> Result<LatentImage> {
    let img = load_grayscale(&dir.join(format!("{id}.png")))?;
    LatentImage::new(id, img.width(), img.height(), img.pixels().to_vec())
}

/// Loads every sample listed in the manifest, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<GroundTruthSample>> {
    let manifest = read_manifest(dir)?;
    let paths: Vec<PathBuf> = SUBDIRS.iter().map(|s| require_dir(dir, s)).collect::<Result<_>>()?;
    manifest
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mask_path = paths[1].join(format!("{id}.png"));
            if !mask_path.is_file() {
                return Err(Error::Dataset(format!("no mask for {id} in {}", paths[1].display())));
            }
            let sample = GroundTruthSample {
                image: load_image(&paths[0], id)?,
                mask: BinaryMask::load(&mask_path)?,
                attention_regions: load_regions(&paths[2].join(format!("{id}.json")))?,
                seed: manifest.seeds.get(i).copied().unwrap_or(0),
            };
            sample.validate()?;
            Ok(sample)
        })
        .collect()
}

/// An evaluation item whose ground truth may be absent.
#[derive(Debug, Clone)]
pub struct EvalEntry {
    pub image: LatentImage,
    pub mask: Option<BinaryMask>,
}

/// Like [`load_dataset`] but tolerates ids without a mask file.
pub fn load_eval_set(dir: &Path) -> Result<Vec<EvalEntry>> {
    let manifest = read_manifest(dir)?;
    let images = require_dir(dir, "images")?;
    let masks = require_dir(dir, "masks")?;
    manifest
        .ids
        .iter()
        .map(|id| {
            let mask_path = masks.join(format!("{id}.png"));
            Ok(EvalEntry {
                image: load_image(&images, id)?,
                mask: if mask_path.is_file() {
                    Some(BinaryMask::load(&mask_path)?)
                } else {
                    None
                },
            })
        })
        .collect()
}
