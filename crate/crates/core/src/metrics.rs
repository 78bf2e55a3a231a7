//! Pixel-level segmentation metrics and dataset reports.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{segment, FusionConfig};
use crate::imaging::LatentImage;
use crate::mask::BinaryMask;
use crate::model::SegFinNet;

/// Published full-pipeline result on NIST SD27 as (MDR, FDR, IoU). Shown for
/// context only; synthetic runs are not comparable.
pub const REFERENCE_NIST_SD27_FULL: (f64, f64, f64) = (0.0257, 0.1636, 0.8176);

/// `(|A|, |B|, |A ∩ B|)`
fn counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<(usize, usize, usize)> {
    if pred.dims() != gt.dims() {
        return Err(Error::validation(format!(
            "prediction {}x{} and ground truth {}x{} differ in size",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (mut a, mut b, mut ab) = (0, 0, 0);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        a += p as usize;
        b += g as usize;
        ab += (p && g) as usize;
    }
    Ok((a, b, ab))
}

/// Missed detection rate: ground-truth foreground not predicted.
pub fn mdr(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (_, b, ab) = counts(pred, gt)?;
    if b == 0 {
        return Err(Error::validation("missed detection rate is undefined for an empty ground truth"));
    }
    Ok((b - ab) as f64 / b as f64)
}

/// False detection rate: predicted foreground outside the ground truth; 0
/// for an empty prediction.
pub fn fdr(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (a, _, ab) = counts(pred, gt)?;
    if a == 0 {
        return Ok(0.0);
    }
    Ok((a - ab) as f64 / a as f64)
}

pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (a, b, ab) = counts(pred, gt)?;
    let union = a + b - ab;
    if union == 0 {
        return Err(Error::validation("IoU is undefined when both masks are empty"));
    }
    Ok(ab as f64 / union as f64)
}

/// Which optional stages run; the labels are the report row names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Neither,
    AttentionOnly,
    VotingOnly,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Neither,
        Ablation::AttentionOnly,
        Ablation::VotingOnly,
        Ablation::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Neither => "w/o AM & VF",
            Ablation::AttentionOnly => "with AM",
            Ablation::VotingOnly => "with VF",
            Ablation::Full => "full",
        }
    }

    pub fn from_flags(use_attention: bool, use_voting: bool) -> Self {
        match (use_attention, use_voting) {
            (false, false) => Ablation::Neither,
            (true, false) => Ablation::AttentionOnly,
            (false, true) => Ablation::VotingOnly,
            (true, true) => Ablation::Full,
        }
    }

    pub fn apply(self, base: &FusionConfig) -> FusionConfig {
        let (a, v) = match self {
            Ablation::Neither => (false, false),
            Ablation::AttentionOnly => (true, false),
            Ablation::VotingOnly => (false, true),
            Ablation::Full => (true, true),
        };
        FusionConfig {
            use_attention: a,
            use_voting: v,
            ..base.clone()
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    /// Accepts the report labels, the short names `none`, `am`, `vf`, `full`,
    /// and `no-am` / `no-vf` for the configuration lacking that stage.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Ablation::ALL
            .into_iter()
            .find(|a| a.label().to_ascii_lowercase() == t)
            .or(match t.as_str() {
                "none" | "neither" | "no-am-vf" => Some(Ablation::Neither),
                "am" | "attention" | "no-vf" => Some(Ablation::AttentionOnly),
                "vf" | "voting" | "no-am" => Some(Ablation::VotingOnly),
                _ => None,
            })
            .ok_or_else(|| {
                Error::validation(format!(
                    "unknown configuration {s:?}; expected one of none, am, vf, full, no-am, no-vf"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub mdr: f64,
    pub fdr: f64,
    pub iou: f64,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_label: String,
    pub mdr: f64,
    pub fdr: f64,
    pub iou: f64,
    pub timing_ms: f64,
    pub per_image: Vec<ImageMetrics>,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// Per-image rows with timing cleared, for determinism comparisons.
    pub fn metric_values(&self) -> Vec<(String, f64, f64, f64)> {
        self.per_image
            .iter()
            .map(|r| (r.id.clone(), r.mdr, r.fdr, r.iou))
            .collect()
    }
}

/// One image to evaluate; a missing ground truth is reported and skipped.
#[derive(Debug, Clone, Copy)]
pub struct EvalSample<'a> {
    pub id: &'a str,
    pub image: &'a LatentImage,
    pub ground_truth: Option<&'a BinaryMask>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Segments every sample under `ablation` and aggregates per-image metrics.
pub fn evaluate(
    samples: &[EvalSample],
    model: &SegFinNet,
    base: &FusionConfig,
    ablation: Ablation,
) -> Result<MetricsReport> {
    let config = ablation.apply(base);
    config.validate()?;
    let rows: Vec<std::result::Result<ImageMetrics, String>> = samples
        .par_iter()
        .map(|s| -> Result<std::result::Result<ImageMetrics, String>> {
            let Some(gt) = s.ground_truth else {
                return Ok(Err(format!("{}: no ground-truth mask, skipped", s.id)));
            };
            if gt.is_empty() {
                return Ok(Err(format!("{}: empty ground-truth mask, skipped", s.id)));
            }
            let start = Instant::now();
            let result = segment(s.image, model, &config)?;
            let time_ms = start.elapsed().as_secs_f64() * 1e3;
            let pred = &result.mask;
            Ok(Ok(ImageMetrics {
                id: s.id.to_string(),
                mdr: mdr(pred, gt)?,
                fdr: fdr(pred, gt)?,
                iou: iou(pred, gt)?,
                time_ms,
            }))
        })
        .collect::<Result<_>>()?;
    let mut per_image = Vec::new();
    let mut warnings = Vec::new();
    for r in rows {
        match r {
            Ok(m) => per_image.push(m),
            Err(w) => {
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    Ok(MetricsReport {
        config_label: ablation.label().to_string(),
        mdr: mean(per_image.iter().map(|r| r.mdr)),
        fdr: mean(per_image.iter().map(|r| r.fdr)),
        iou: mean(per_image.iter().map(|r| r.iou)),
        timing_ms: mean(per_image.iter().map(|r| r.time_ms)),
        per_image,
        warnings,
    })
}

/// Human-readable table with one row per configuration.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>8} {:>8} {:>8} {:>10} {:>7}",
        "Configuration", "MDR(%)", "FDR(%)", "IoU(%)", "Time(ms)", "Images"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<14} {:>8.2} {:>8.2} {:>8.2} {:>10.1} {:>7}",
            r.config_label,
            100.0 * r.mdr,
            100.0 * r.fdr,
            100.0 * r.iou,
            r.timing_ms,
            r.per_image.len()
        );
    }
    for r in reports {
        for w in &r.warnings {
            let _ = writeln!(s, "warning [{}]: {w}", r.config_label);
        }
    }
    s
}

pub fn write_reports(reports: &[MetricsReport], table_path: &Path, json_path: &Path) -> Result<()> {
    std::fs::write(table_path, format_table(reports)).map_err(|e| Error::io(table_path, e))?;
    let json = serde_json::to_string_pretty(reports).map_err(|e| Error::json(json_path, e))?;
    std::fs::write(json_path, json).map_err(|e| Error::io(json_path, e))
}
