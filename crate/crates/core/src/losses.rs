//! Training objectives: the class-weighted partial mask loss, the detection
//! companion losses and their weighted total.

use serde::{Deserialize, Serialize};

use crate::detector::NUM_CLASSES;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

/// Coefficients of the total loss and the background regulariser weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 2.0,
            beta: 1.0,
            gamma: 2.0,
            lambda: 0.8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("loss {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_class: f64,
    pub l_box: f64,
    pub l_mask: f64,
    pub l_total: f64,
    pub class_weights: Vec<f64>,
}

/// `softmax(1 - n_j / N)` over per-class pixel counts.
pub fn class_weights(pixel_counts: &[usize]) -> Result<Vec<f64>> {
    class_weights_of_total(pixel_counts, pixel_counts.iter().sum())
}

/// Same as [`class_weights`] with an explicit total `N`, e.g. when background
/// pixels count towards the total but do not get a weight.
pub fn class_weights_of_total(pixel_counts: &[usize], total: usize) -> Result<Vec<f64>> {
    if pixel_counts.is_empty() {
        return Err(Error::validation("class weights need at least one class"));
    }
    if total == 0 || pixel_counts.iter().all(|&n| n == 0) {
        return Err(Error::validation("class weights need at least one labelled pixel"));
    }
    let scores: Vec<f64> = pixel_counts
        .iter()
        .map(|&n| 1.0 - n as f64 / total as f64)
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// Per-class probabilities for one RoI, `classes × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPrediction {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub probs: Vec<f64>,
}

impl MaskPrediction {
    pub fn plane(&self, j: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.probs[j * n..(j + 1) * n]
    }
}

/// Per-pixel labels for one RoI: 0 is background, `j + 1` is mask class `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTarget {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

#[inline]
fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[inline]
fn bce_grad(p: f64, y: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

fn check_pair(pred: &MaskPrediction, target: &MaskTarget) -> Result<()> {
    if pred.height != target.height
        || pred.width != target.width
        || pred.probs.len() != pred.classes * pred.height * pred.width
        || target.labels.len() != target.height * target.width
    {
        return Err(Error::validation(format!(
            "mask prediction {}x{}x{} does not align with target {}x{}",
            pred.classes, pred.height, pred.width, target.height, target.width
        )));
    }
    if let Some(&l) = target.labels.iter().find(|&&l| l as usize > pred.classes) {
        return Err(Error::validation(format!(
            "target label {l} exceeds {} mask classes",
            pred.classes
        )));
    }
    Ok(())
}

/// Average binary cross-entropy of class `j` over pixels labelled `j` or
/// background; pixels of other foreground classes are discarded.
pub fn class_term(pred: &MaskPrediction, target: &MaskTarget, j: usize) -> f64 {
    let own = (j + 1) as u8;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&p, &l) in pred.plane(j).iter().zip(&target.labels) {
        if l == own || l == 0 {
            sum += bce(p, if l == own { 1.0 } else { 0.0 });
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Average binary cross-entropy of class `j` against the
/// background / non-background partition over all pixels.
pub fn background_term(pred: &MaskPrediction, target: &MaskTarget, j: usize) -> f64 {
    let plane = pred.plane(j);
    if plane.is_empty() {
        return 0.0;
    }
    let sum: f64 = plane
        .iter()
        .zip(&target.labels)
        .map(|(&p, &l)| bce(p, if l != 0 { 1.0 } else { 0.0 }))
        .sum();
    sum / plane.len() as f64
}

/// `Σ_j Σ_i [ w_j · L(γ_ij, y_ij) + λ · l(γ_ij, y_ij) ]`.
pub fn mask_loss(
    preds: &[MaskPrediction],
    targets: &[MaskTarget],
    weights: &[f64],
    lambda: f64,
) -> Result<f64> {
    check_batch(preds, targets, weights)?;
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        for (j, &w) in weights.iter().enumerate() {
            total += w * class_term(p, t, j) + lambda * background_term(p, t, j);
        }
    }
    Ok(total)
}

fn check_batch(preds: &[MaskPrediction], targets: &[MaskTarget], weights: &[f64]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::validation(format!(
            "{} mask predictions but {} targets",
            preds.len(),
            targets.len()
        )));
    }
    for (p, t) in preds.iter().zip(targets) {
        check_pair(p, t)?;
        if p.classes != weights.len() {
            return Err(Error::validation(format!(
                "{} class weights for {} mask classes",
                weights.len(),
                p.classes
            )));
        }
    }
    Ok(())
}

/// [`mask_loss`] together with its gradient w.r.t. every predicted probability.
pub fn mask_loss_with_grad(
    preds: &[MaskPrediction],
    targets: &[MaskTarget],
    weights: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let loss = mask_loss(preds, targets, weights, lambda)?;
    let mut grads = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(targets) {
        let n = p.height * p.width;
        let mut g = vec![0.0; p.probs.len()];
        for (j, &w) in weights.iter().enumerate() {
            let own = (j + 1) as u8;
            let counted = t.labels.iter().filter(|&&l| l == own || l == 0).count();
            let plane = p.plane(j);
            let gplane = &mut g[j * n..(j + 1) * n];
            for i in 0..n {
                let l = t.labels[i];
                let mut d = lambda * bce_grad(plane[i], if l != 0 { 1.0 } else { 0.0 }) / n as f64;
                if counted > 0 && (l == own || l == 0) {
                    d += w * bce_grad(plane[i], if l == own { 1.0 } else { 0.0 }) / counted as f64;
                }
                gplane[i] = d;
            }
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// One sampled anchor: its outputs and the assigned target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSample {
    pub logits: [f64; NUM_CLASSES],
    pub pred_delta: [f64; 4],
    /// 0 background, 1 fingermark, 2 attention.
    pub target_class: usize,
    /// Regression target, present for positives only.
    pub target_delta: Option<[f64; 4]>,
}

/// Gradients of the detection losses w.r.t. one sample's outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorGrad {
    pub logits: [f64; NUM_CLASSES],
    pub delta: [f64; 4],
}

/// `(L_C, L_B)`: mean softmax cross-entropy over all samples and mean
/// smooth-L1 (summed over the 4 delta components) over positives.
pub fn detection_losses(samples: &[AnchorSample]) -> (f64, f64) {
    let (lc, lb, _) = detection_losses_with_grad(samples);
    (lc, lb)
}

pub fn detection_losses_with_grad(samples: &[AnchorSample]) -> (f64, f64, Vec<AnchorGrad>) {
    let n = samples.len();
    let positives = samples.iter().filter(|s| s.target_delta.is_some()).count();
    let mut lc = 0.0;
    let mut lb = 0.0;
    let mut grads = Vec::with_capacity(n);
    for s in samples {
        let m = s.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + s.logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        lc += lse - s.logits[s.target_class];
        let mut g = AnchorGrad {
            logits: [0.0; NUM_CLASSES],
            delta: [0.0; 4],
        };
        for k in 0..NUM_CLASSES {
            let p = (s.logits[k] - lse).exp();
            let y = if k == s.target_class { 1.0 } else { 0.0 };
            g.logits[k] = (p - y) / n as f64;
        }
        if let Some(t) = s.target_delta {
            for c in 0..4 {
                let e = s.pred_delta[c] - t[c];
                lb += smooth_l1(e);
                g.delta[c] = smooth_l1_grad(e) / positives as f64;
            }
        }
        grads.push(g);
    }
    let lc = if n == 0 { 0.0 } else { lc / n as f64 };
    let lb = if positives == 0 { 0.0 } else { lb / positives as f64 };
    (lc, lb, grads)
}

/// `L_all = α L_C + β L_B + γ L_M`.
pub fn total_loss(
    l_class: f64,
    l_box: f64,
    l_mask: f64,
    config: &LossConfig,
    class_weights: Vec<f64>,
) -> Result<LossBreakdown> {
    for (name, v) in [("L_C", l_class), ("L_B", l_box), ("L_M", l_mask)] {
        if !v.is_finite() {
            return Err(Error::numeric("total_loss", format!("{name} is {v}")));
        }
    }
    Ok(LossBreakdown {
        l_class,
        l_box,
        l_mask,
        l_total: config.alpha * l_class + config.beta * l_box + config.gamma * l_mask,
        class_weights,
    })
}
