//! Training of the detector and mask head on the weighted total loss.

mod checkpoint;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    config_differences, load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointMeta,
};

use crate::detector::{encode, generate_anchors, image_tensor, BBox, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::imaging::{LatentImage, VariantKind};
use crate::losses::{
    class_weights_of_total, detection_losses_with_grad, mask_loss_with_grad, total_loss, AnchorSample, LossBreakdown,
    LossConfig, MaskPrediction, MaskTarget,
};
use crate::metrics::{evaluate, Ablation, EvalSample};
use crate::model::{ModelConfig, SegFinNet};
use crate::nn::{Parameters, Tensor3};
use crate::seghead::{nonwarp_roialign, nonwarp_roialign_backward, RoiSampling, UPSAMPLE};
use crate::synthdata::{augment, sample_seed, GroundTruthSample};

const POSITIVE_IOU: f64 = 0.5;
const NEGATIVE_IOU: f64 = 0.3;
/// Fingermark components smaller than this are not detection targets.
const MIN_COMPONENT_PIXELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub phase1_iters: usize,
    pub total_iters: usize,
    pub weight_decay: f64,
    pub images_per_step: usize,
    pub roi_samples_per_image: usize,
    /// Upper bound on mask-head RoIs per image.
    pub mask_rois_per_image: usize,
    pub loss: LossConfig,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub augment: bool,
    /// Train on a random grayscale rendering each step.
    pub random_variants: bool,
    /// Samples held out from the end of the dataset for best-checkpoint selection.
    pub validation_count: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_phase1: 0.001,
            lr_phase2: 0.0001,
            phase1_iters: 600,
            total_iters: 2000,
            weight_decay: 0.0001,
            images_per_step: 1,
            roi_samples_per_image: 32,
            mask_rois_per_image: 4,
            loss: LossConfig::default(),
            seed: 0,
            optimizer: Optimizer::Adam,
            augment: true,
            random_variants: true,
            validation_count: 10,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phase1_iters > self.total_iters {
            return Err(Error::validation(format!(
                "phase1_iters {} exceeds total_iters {}",
                self.phase1_iters, self.total_iters
            )));
        }
        for (name, v) in [("lr_phase1", self.lr_phase1), ("lr_phase2", self.lr_phase2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::validation("weight_decay must be non-negative"));
        }
        if self.images_per_step == 0 || self.roi_samples_per_image == 0 {
            return Err(Error::validation("images_per_step and roi_samples_per_image must be positive"));
        }
        self.loss.validate()
    }

    /// Learning rate used at iteration `iter` (0-based).
    pub fn lr_at(&self, iter: usize) -> f64 {
        if iter < self.phase1_iters {
            self.lr_phase1
        } else {
            self.lr_phase2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub lr: f64,
    #[serde(rename = "L_C")]
    pub l_class: f64,
    #[serde(rename = "L_B")]
    pub l_box: f64,
    #[serde(rename = "L_M")]
    pub l_mask: f64,
    #[serde(rename = "L_all")]
    pub l_total: f64,
}

/// A classifier target for one sampled anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorTarget {
    pub index: usize,
    pub class: usize,
    pub delta: Option<[f64; 4]>,
}

/// A mask-head RoI with its labels on the upsampled valid grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiTarget {
    pub bbox: BBox,
    pub target: MaskTarget,
}

/// One training image with all random choices already made.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedImage {
    pub image: LatentImage,
    pub anchors: Vec<AnchorTarget>,
    pub rois: Vec<RoiTarget>,
}

/// Ground-truth boxes with classifier indices: fingermark components and
/// attention regions.
pub fn ground_truth_boxes(sample: &GroundTruthSample) -> Vec<(BBox, usize)> {
    let mut out: Vec<(BBox, usize)> = sample
        .mask
        .component_boxes(MIN_COMPONENT_PIXELS)
        .into_iter()
        .map(|b| (BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64), 1))
        .collect();
    out.extend(sample.attention_regions.iter().map(|r| (BBox::from_pixels(*r), 2)));
    out
}

/// Labels anchors by IoU (positive ≥ 0.5, negative < 0.3, plus the best
/// anchor of every object) and samples up to `count` of them, at most half
/// positive.
pub fn sample_anchor_targets<R: Rng + ?Sized>(
    anchors: &[BBox],
    gt: &[(BBox, usize)],
    count: usize,
    rng: &mut R,
) -> Vec<AnchorTarget> {
    let mut best = vec![(0.0f64, usize::MAX); anchors.len()];
    let mut forced = vec![false; anchors.len()];
    for (g, (gb, _)) in gt.iter().enumerate() {
        let mut top = (0.0, usize::MAX);
        for (i, a) in anchors.iter().enumerate() {
            let iou = a.iou(gb);
            if iou > best[i].0 {
                best[i] = (iou, g);
            }
            if iou > top.0 {
                top = (iou, i);
            }
        }
        if top.1 != usize::MAX {
            forced[top.1] = true;
            if best[top.1].1 != g && best[top.1].0 <= top.0 {
                best[top.1] = (top.0, g);
            }
        }
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..anchors.len() {
        let (iou, g) = best[i];
        if g != usize::MAX && (iou >= POSITIVE_IOU || forced[i]) {
            pos.push(i);
        } else if iou < NEGATIVE_IOU {
            neg.push(i);
        }
    }
    pos.shuffle(rng);
    neg.shuffle(rng);
    pos.truncate(count / 2);
    neg.truncate(count - pos.len());
    let mut out: Vec<AnchorTarget> = pos
        .into_iter()
        .map(|i| {
            let (gb, class) = gt[best[i].1];
            AnchorTarget {
                index: i,
                class,
                delta: Some(encode(&anchors[i], &gb).to_array()),
            }
        })
        .collect();
    out.extend(neg.into_iter().map(|i| AnchorTarget {
        index: i,
        class: 0,
        delta: None,
    }));
    out
}

/// Each side moved by up to 10% of the box size, clipped to the image.
fn jitter<R: Rng + ?Sized>(b: &BBox, rng: &mut R, w: f64, h: f64) -> BBox {
    let (bw, bh) = (b.width(), b.height());
    let mut j = |v: f64, s: f64| v + rng.gen_range(-0.1..=0.1) * s;
    BBox::new(j(b.x0, bw), j(b.y0, bh), j(b.x1, bw), j(b.y1, bh)).clip(w, h)
}

/// Labels on the upsampled valid grid of `bbox`, nearest-neighbour from the
/// image label map; positions outside the image are background.
pub fn roi_labels(labels: &[u8], width: usize, height: usize, bbox: &BBox, canvas: usize) -> Result<MaskTarget> {
    let s = RoiSampling::new(bbox, 8, canvas)?;
    let (th, tw) = (s.valid_h * UPSAMPLE, s.valid_w * UPSAMPLE);
    let mut out = Vec::with_capacity(th * tw);
    for r in 0..th {
        let y = bbox.y0 + (r as f64 + 0.5) * bbox.height() / th as f64;
        for c in 0..tw {
            let x = bbox.x0 + (c as f64 + 0.5) * bbox.width() / tw as f64;
            let inside = x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64;
            out.push(if inside { labels[y as usize * width + x as usize] } else { 0 });
        }
    }
    Ok(MaskTarget {
        height: th,
        width: tw,
        labels: out,
    })
}

/// Samples anchors and mask RoIs for an (already augmented) sample rendered
/// as `variant`.
pub fn prepare_image<R: Rng + ?Sized>(
    sample: &GroundTruthSample,
    variant: VariantKind,
    model: &ModelConfig,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<PreparedImage> {
    let image = variant.apply(&sample.image);
    let (w, h) = (image.width(), image.height());
    let stride = model.anchors.stride;
    let anchors = generate_anchors(h.div_ceil(stride), w.div_ceil(stride), &model.anchors)?;
    let gt = ground_truth_boxes(sample);
    let anchor_targets = sample_anchor_targets(&anchors, &gt, config.roi_samples_per_image, rng);

    let labels = sample.label_map();
    let (wf, hf) = (w as f64, h as f64);
    let mut boxes: Vec<BBox> = gt.iter().map(|(b, _)| jitter(b, rng, wf, hf)).collect();
    boxes.shuffle(rng);
    if rng.gen_bool(0.5) {
        let bw = rng.gen_range(32.0..=(wf * 0.6).max(33.0));
        let bh = bw * rng.gen_range(0.6..1.6);
        let x0 = rng.gen_range(0.0..(wf - bw).max(1.0));
        let y0 = rng.gen_range(0.0..(hf - bh).max(1.0));
        boxes.push(BBox::new(x0, y0, x0 + bw, y0 + bh).clip(wf, hf));
    }
    boxes.truncate(config.mask_rois_per_image);
    let mut rois = Vec::new();
    for b in boxes {
        if b.width() < 8.0 || b.height() < 8.0 {
            continue;
        }
        let target = roi_labels(&labels, w, h, &b, model.mask_head.canvas)?;
        rois.push(RoiTarget { bbox: b, target });
    }
    Ok(PreparedImage {
        image,
        anchors: anchor_targets,
        rois,
    })
}

struct RoiPass {
    bbox: BBox,
    valid: (usize, usize),
    fuse: crate::seghead::FuseTrace,
    up: crate::seghead::MaskHeadTrace,
    probs: Tensor3,
}

struct ImagePass {
    trace: crate::detector::BackboneTrace,
    low_shape: (usize, usize, usize),
    head: crate::detector::HeadOutput,
    head_trace: crate::detector::HeadTrace,
    anchor_grads: Vec<crate::losses::AnchorGrad>,
    rois: Vec<RoiPass>,
}

/// Loss of a prepared batch and, if requested, its gradient w.r.t. every
/// model parameter. `L_C` and `L_B` are averaged over images; `L_M` sums over
/// all RoIs with class weights computed from this batch.
pub fn batch_loss(
    model: &SegFinNet,
    batch: &[PreparedImage],
    loss: &LossConfig,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<SegFinNet>)> {
    let n_img = batch.len().max(1) as f64;
    let canvas = model.canvas();
    let classes = model.mask_head.classes();
    let mut passes = Vec::with_capacity(batch.len());
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    let (mut lc, mut lb) = (0.0, 0.0);
    for item in batch {
        let (feats, trace) = model.backbone.forward_traced(&image_tensor(&item.image))?;
        let (head, head_trace) = model.proposals.forward(&feats.high().map);
        head.raw.ensure_finite("proposal_head")?;
        let samples: Vec<AnchorSample> = item
            .anchors
            .iter()
            .map(|t| AnchorSample {
                logits: head.logits(t.index),
                pred_delta: head.delta(t.index),
                target_class: t.class,
                target_delta: t.delta,
            })
            .collect();
        let (c, b, anchor_grads) = detection_losses_with_grad(&samples);
        lc += c / n_img;
        lb += b / n_img;
        let mut rois = Vec::with_capacity(item.rois.len());
        for r in &item.rois {
            let high = nonwarp_roialign(feats.high(), &r.bbox, canvas)?;
            let low = nonwarp_roialign(feats.low(), &r.bbox, canvas)?;
            let (fused, fuse) = model.mask_head.fuse_traced(&high, &low)?;
            let (set, up) = model.mask_head.upsample_traced(&fused)?;
            let (vh, vw) = (set.valid_h, set.valid_w);
            if (vh, vw) != (r.target.height, r.target.width) {
                return Err(Error::validation(format!(
                    "mask target {}x{} does not match RoI output {vh}x{vw}",
                    r.target.height, r.target.width
                )));
            }
            let side = set.probs.w;
            let mut p = Vec::with_capacity(classes * vh * vw);
            for j in 0..classes {
                let plane = set.probs.plane(j);
                for row in 0..vh {
                    p.extend_from_slice(&plane[row * side..row * side + vw]);
                }
            }
            preds.push(MaskPrediction {
                classes,
                height: vh,
                width: vw,
                probs: p,
            });
            targets.push(r.target.clone());
            rois.push(RoiPass {
                bbox: r.bbox,
                valid: (vh, vw),
                fuse,
                up,
                probs: set.probs,
            });
        }
        let low = &feats.low().map;
        passes.push(ImagePass {
            trace,
            low_shape: (low.c, low.h, low.w),
            head,
            head_trace,
            anchor_grads,
            rois,
        });
    }

    let mut counts = vec![0usize; classes];
    let mut total_px = 0usize;
    for t in &targets {
        total_px += t.labels.len();
        for &l in &t.labels {
            if l > 0 && (l as usize) <= classes {
                counts[l as usize - 1] += 1;
            }
        }
    }
    let weights = if counts.iter().any(|&c| c > 0) {
        class_weights_of_total(&counts, total_px)?
    } else {
        vec![1.0 / classes as f64; classes]
    };
    let (lm, mask_grads) = mask_loss_with_grad(&preds, &targets, &weights, loss.lambda)?;
    let breakdown = total_loss(lc, lb, lm, loss, weights)?;
    if !with_grad {
        return Ok((breakdown, None));
    }

    let mut grad = model.zeros_like();
    let mut mask_grads = mask_grads.into_iter();
    for (item, pass) in batch.iter().zip(passes) {
        let raw = &pass.head.raw;
        let mut g_raw = Tensor3::zeros(raw.c, raw.h, raw.w);
        for (t, g) in item.anchors.iter().zip(&pass.anchor_grads) {
            let gl: [f64; NUM_CLASSES] = std::array::from_fn(|k| loss.alpha * g.logits[k] / n_img);
            let gd: [f64; 4] = std::array::from_fn(|k| loss.beta * g.delta[k] / n_img);
            pass.head.scatter_grad(t.index, &gl, &gd, &mut g_raw);
        }
        let mut g_high = model.proposals.backward(&pass.head_trace, &g_raw, &mut grad.proposals);
        let (c, h, w) = pass.low_shape;
        let mut g_low = Tensor3::zeros(c, h, w);
        for roi in &pass.rois {
            let g = mask_grads.next().expect("one gradient per RoI");
            let (vh, vw) = roi.valid;
            let side = roi.probs.w;
            let mut g_probs = Tensor3::zeros(roi.probs.c, roi.probs.h, side);
            for j in 0..classes {
                for row in 0..vh {
                    let dst = (j * side + row) * side;
                    let src = (j * vh + row) * vw;
                    for col in 0..vw {
                        g_probs.data[dst + col] = loss.gamma * g[src + col];
                    }
                }
            }
            let g_fused = model.mask_head.upsample_backward(&roi.up, &roi.probs, &g_probs, &mut grad.mask_head);
            let g_low_roi = model.mask_head.fuse_backward(&roi.fuse, &g_fused, &mut grad.mask_head);
            nonwarp_roialign_backward(8, &g_fused, &roi.bbox, &mut g_high)?;
            nonwarp_roialign_backward(4, &g_low_roi, &roi.bbox, &mut g_low)?;
        }
        model.backbone.backward(&pass.trace, g_low, g_high, &mut grad.backbone);
    }
    Ok((breakdown, Some(grad)))
}

/// Parameter update rule with decoupled weight decay: every step first
/// scales the weights by `1 - lr * decay`.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: Optimizer, params: usize) -> Self {
        let n = if kind == Optimizer::Adam { params } else { 0 };
        OptimizerState {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut SegFinNet, grad: &SegFinNet, lr: f64, decay: f64) -> Result<()> {
        let g = grad.flat();
        let mut w = model.flat();
        let keep = 1.0 - lr * decay;
        self.t += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (wi, gi) in w.iter_mut().zip(&g) {
                    *wi = *wi * keep - lr * gi;
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
                let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
                for i in 0..w.len() {
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g[i];
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                    let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
                    w[i] = w[i] * keep - lr * update;
                }
            }
        }
        model.load_flat(&w)
    }
}

/// Where training artefacts go.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub log: PathBuf,
}

impl TrainOutputs {
    /// `<path>`, `<path>.best` and `<path>.log.jsonl`.
    pub fn beside(checkpoint: &Path) -> Self {
        let with = |suffix: &str| {
            let mut s = checkpoint.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        TrainOutputs {
            checkpoint: checkpoint.to_path_buf(),
            best_checkpoint: with(".best"),
            log: with(".log.jsonl"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: SegFinNet,
    pub log: Vec<LogEntry>,
    /// Best validation IoU and the iteration it was reached at.
    pub best: Option<(f64, usize)>,
    pub validation_ids: Vec<String>,
}

/// Held-out mean IoU of the attention-filtered single-rendering pipeline.
fn validation_iou(model: &SegFinNet, samples: &[GroundTruthSample], fusion: &FusionConfig) -> Result<f64> {
    let items: Vec<EvalSample> = samples
        .iter()
        .map(|s| EvalSample {
            id: s.id(),
            image: &s.image,
            ground_truth: Some(&s.mask),
        })
        .collect();
    Ok(evaluate(&items, model, fusion, Ablation::AttentionOnly)?.iou)
}

fn write_log_line(out: &mut Option<BufWriter<File>>, path: Option<&Path>, e: &LogEntry) -> Result<()> {
    if let (Some(w), Some(p)) = (out.as_mut(), path) {
        let line = serde_json::to_string(e).map_err(|err| Error::json(p, err))?;
        writeln!(w, "{line}").map_err(|err| Error::io(p, err))?;
    }
    Ok(())
}

/// Trains a freshly initialised model (seeded by `config.seed`).
pub fn train(
    data: &[GroundTruthSample],
    model_config: &ModelConfig,
    config: &TrainConfig,
    outputs: Option<&TrainOutputs>,
) -> Result<TrainResult> {
    let model = SegFinNet::initialized(model_config.clone(), config.seed)?;
    train_from(model, data, config, outputs)
}

/// Trains `model` in place. The sample order, augmentations, renderings and
/// target sampling are all derived from `config.seed`.
pub fn train_from(
    mut model: SegFinNet,
    data: &[GroundTruthSample],
    config: &TrainConfig,
    outputs: Option<&TrainOutputs>,
) -> Result<TrainResult> {
    config.validate()?;
    if data.len() < 10 {
        return Err(Error::Dataset(format!("training needs at least 10 samples, got {}", data.len())));
    }
    let n_val = config.validation_count.min(data.len() / 5);
    let (train_set, val_set) = data.split_at(data.len() - n_val);
    let fusion = FusionConfig::default();
    let mut meta = CheckpointMeta::for_model(&model);
    meta.train = Some(config.clone());
    let mut log_out = match outputs {
        Some(o) => {
            if let Some(parent) = o.log.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            Some(BufWriter::new(File::create(&o.log).map_err(|e| Error::io(&o.log, e))?))
        }
        None => None,
    };
    let log_path = outputs.map(|o| o.log.as_path());
    let mut opt = OptimizerState::new(config.optimizer, model.param_count());
    let mut order_rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed ^ 0x0DDE_5EED, 0));
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(config.total_iters);
    let mut best: Option<(f64, usize)> = None;

    for iter in 0..config.total_iters {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed ^ 0x5EED_7EA1, iter));
        let mut batch = Vec::with_capacity(config.images_per_step);
        for _ in 0..config.images_per_step {
            if order.is_empty() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut order_rng);
            }
            let sample = &train_set[order.pop().expect("refilled")];
            let sample = if config.augment && rng.gen_bool(0.8) {
                match augment(sample, rng.gen()) {
                    Err(Error::Validation(msg)) => {
                        log::debug!("{msg}; using the sample unaugmented");
                        sample.clone()
                    }
                    other => other?,
                }
            } else {
                sample.clone()
            };
            let kind = if config.random_variants {
                VariantKind::ALL[rng.gen_range(0..VariantKind::ALL.len())]
            } else {
                VariantKind::Original
            };
            batch.push(prepare_image(&sample, kind, &model.config, config, &mut rng)?);
        }
        let lr = config.lr_at(iter);
        let step = batch_loss(&model, &batch, &config.loss, true);
        let (breakdown, grad) = match step {
            Ok((b, Some(g))) if b.l_total.is_finite() => (b, g),
            Ok(_) | Err(Error::Numeric { .. }) => {
                let detail = match &step {
                    Err(e) => e.to_string(),
                    Ok((b, _)) => format!("total loss {}", b.l_total),
                };
                let mut msg = format!("training diverged at iteration {iter}: {detail}");
                if let Some(o) = outputs {
                    meta.iteration = iter;
                    save_checkpoint(&model, &meta, &o.checkpoint)?;
                    msg.push_str(&format!("; last good weights saved to {}", o.checkpoint.display()));
                }
                if let Some(w) = log_out.as_mut() {
                    let _ = w.flush();
                }
                return Err(Error::numeric("train", msg));
            }
            Err(e) => return Err(e),
        };
        opt.step(&mut model, &grad, lr, config.weight_decay)?;
        let entry = LogEntry {
            iteration: iter,
            lr,
            l_class: breakdown.l_class,
            l_box: breakdown.l_box,
            l_mask: breakdown.l_mask,
            l_total: breakdown.l_total,
        };
        write_log_line(&mut log_out, log_path, &entry)?;
        if iter % 50 == 0 {
            log::info!(
                "iter {iter} lr {lr} L_C {:.4} L_B {:.4} L_M {:.4} L_all {:.4}",
                entry.l_class,
                entry.l_box,
                entry.l_mask,
                entry.l_total
            );
        }
        log.push(entry);
        let done = iter + 1;
        if !val_set.is_empty() && config.eval_every > 0 && (done % config.eval_every == 0 || done == config.total_iters) {
            let v = validation_iou(&model, val_set, &fusion)?;
            log::info!("iter {done} validation IoU {v:.4}");
            if best.map_or(true, |(b, _)| v > b) {
                best = Some((v, done));
                if let Some(o) = outputs {
                    let mut m = meta.clone();
                    m.iteration = done;
                    m.validation_iou = Some(v);
                    save_checkpoint(&model, &m, &o.best_checkpoint)?;
                }
            }
        }
    }
    if let Some(w) = log_out.as_mut() {
        w.flush().map_err(|e| Error::io(log_path.unwrap(), e))?;
    }
    if let Some(o) = outputs {
        meta.iteration = config.total_iters;
        meta.validation_iou = best.filter(|b| b.1 == config.total_iters).map(|b| b.0);
        save_checkpoint(&model, &meta, &o.checkpoint)?;
        if best.is_none() {
            save_checkpoint(&model, &meta, &o.best_checkpoint)?;
        }
    }
    Ok(TrainResult {
        model,
        log,
        best,
        validation_ids: val_set.iter().map(|s| s.id().to_string()).collect(),
    })
}
