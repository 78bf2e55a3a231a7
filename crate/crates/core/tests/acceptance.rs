//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 1 4 6`.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segfinnet::attention::{attention_decisions, overlap_ratio};
use segfinnet::config::RunConfig;
use segfinnet::detector::{BBox, Detection, FeatureLevel, Label};
use segfinnet::fusion::{vote_masks, FusionConfig};
use segfinnet::losses::{
    background_term, class_term, class_weights, mask_loss, mask_loss_with_grad, total_loss, LossConfig,
    MaskPrediction, MaskTarget,
};
use segfinnet::mask::BinaryMask;
use segfinnet::metrics::{evaluate, fdr, format_table, iou, mdr, Ablation, EvalSample, MetricsReport};
use segfinnet::model::{ModelConfig, SegFinNet};
use segfinnet::nn::{Parameters, Tensor3};
use segfinnet::seghead::{bilinear_sample, nonwarp_roialign, MaskHead, MaskHeadConfig, RoIFeature};
use segfinnet::synthdata::{generate_dataset, write_dataset, GroundTruthSample, SynthParams};
use segfinnet::trainer::{train, TrainConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
    let p = rng.gen_range(0.05..0.95);
    BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(p))
}

fn pixel_set(m: &BinaryMask) -> HashSet<(usize, usize)> {
    let (w, h) = m.dims();
    (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| m.get(x, y)).collect()
}

// 1 -----------------------------------------------------------------------

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let pred = random_mask(&mut rng, 64, 64);
        let gt = random_mask(&mut rng, 64, 64);
        let (p, g) = (pixel_set(&pred), pixel_set(&gt));
        let inter = p.intersection(&g).count() as f64;
        let union = p.union(&g).count() as f64;
        let want = [
            g.difference(&p).count() as f64 / g.len() as f64,
            p.difference(&g).count() as f64 / p.len() as f64,
            inter / union,
        ];
        let got = [
            mdr(&pred, &gt).map_err(|e| e.to_string())?,
            fdr(&pred, &gt).map_err(|e| e.to_string())?,
            iou(&pred, &gt).map_err(|e| e.to_string())?,
        ];
        for k in 0..3 {
            let d = (got[k] - want[k]).abs();
            worst = worst.max(d);
            ensure(d <= 1e-12, || format!("case {case} metric {k}: {} vs oracle {}", got[k], want[k]))?;
        }
        let dual = (mdr(&pred, &gt).unwrap(), fdr(&gt, &pred).unwrap());
        ensure(dual.0 == dual.1, || format!("case {case}: MDR(A,B) {} != FDR(B,A) {}", dual.0, dual.1))?;
        ensure(iou(&pred, &gt).unwrap() == iou(&gt, &pred).unwrap(), || format!("case {case}: IoU asymmetric"))?;
    }
    Ok(format!("1000 pairs, max deviation {worst:.1e}, duality and symmetry exact"))
}

// 2 -----------------------------------------------------------------------

fn bilinear_oracle(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.max(0.0).min((h - 1) as f64);
    let x = x.max(0.0).min((w - 1) as f64);
    let (y0, x0) = (y.floor(), x.floor());
    let (dy, dx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| {
        let (yi, xi) = ((yy as usize).min(h - 1), (xx as usize).min(w - 1));
        plane[yi * w + xi]
    };
    at(y0, x0) * (1.0 - dy) * (1.0 - dx)
        + at(y0, x0 + 1.0) * (1.0 - dy) * dx
        + at(y0 + 1.0, x0) * dy * (1.0 - dx)
        + at(y0 + 1.0, x0 + 1.0) * dy * dx
}

fn bilinear_and_roialign() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let plane: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y, x) = (rng.gen_range(0.0..7.0), rng.gen_range(0.0..7.0));
        let d = (bilinear_sample(&plane, 8, 8, y, x) - bilinear_oracle(&plane, 8, 8, y, x)).abs();
        worst = worst.max(d);
        ensure(d <= 1e-6, || format!("sample at ({y}, {x}) off by {d}"))?;
    }
    let stride = 8usize;
    let canvas = 8usize;
    for case in 0..100 {
        let map = Tensor3::from_vec(2, 8, 8, (0..128).map(|_| rng.gen_range(0.1..1.0)).collect());
        let level = FeatureLevel { stride, map: map.clone() };
        let bw = rng.gen_range(8.0..64.0f64);
        let bh = rng.gen_range(8.0..64.0f64);
        if bw * bh < 64.0 {
            continue;
        }
        let x0 = rng.gen_range(0.0..64.0 - bw);
        let y0 = rng.gen_range(0.0..64.0 - bh);
        let bbox = BBox::new(x0, y0, x0 + bw, y0 + bh);
        let roi = nonwarp_roialign(&level, &bbox, canvas).map_err(|e| e.to_string())?;
        let (vh, vw) = (roi.valid_h, roi.valid_w);
        let mut padded = 0.0;
        for ch in 0..2 {
            for r in 0..canvas {
                for c in 0..canvas {
                    let v = roi.grid.get(ch, r, c);
                    if r >= vh || c >= vw {
                        padded += v.abs();
                        continue;
                    }
                    let s = stride as f64;
                    let y = y0 / s + (r as f64 + 0.5) * (bh / s) / vh as f64 - 0.5;
                    let x = x0 / s + (c as f64 + 0.5) * (bw / s) / vw as f64 - 0.5;
                    let want = bilinear_oracle(map.plane(ch), 8, 8, y, x);
                    let d = (v - want).abs();
                    worst = worst.max(d);
                    ensure(d <= 1e-6, || format!("case {case} cell ({r}, {c}) off by {d}"))?;
                }
            }
        }
        ensure(padded == 0.0, || format!("case {case}: padded region sums to {padded}"))?;
        let (long, short, v_long, v_short) = if bw >= bh { (bw, bh, vw, vh) } else { (bh, bw, vh, vw) };
        ensure(v_long == canvas, || format!("case {case}: long side fills {v_long} of {canvas}"))?;
        let ideal = canvas as f64 * short / long;
        ensure((v_short as f64 - ideal).abs() <= 1.0, || {
            format!("case {case}: short side {v_short} cells, box ratio implies {ideal:.2}")
        })?;
    }
    Ok(format!("100 points + 100 RoIs, max deviation {worst:.1e}, padding exactly zero"))
}

// 3 -----------------------------------------------------------------------

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn mask_loss_gradient() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (h, w, classes) = (5, 6, 2);
        let pred = MaskPrediction {
            classes,
            height: h,
            width: w,
            probs: (0..classes * h * w).map(|_| rng.gen_range(0.05..0.95)).collect(),
        };
        let target = MaskTarget {
            height: h,
            width: w,
            labels: (0..h * w).map(|_| rng.gen_range(0..=classes as u8)).collect(),
        };
        let weights = [0.35, 0.65];
        let (p, t) = (std::slice::from_ref(&pred), std::slice::from_ref(&target));
        let (_, g) = mask_loss_with_grad(p, t, &weights, 0.8).map_err(|e| e.to_string())?;
        for i in 0..pred.probs.len() {
            let step = 1e-6;
            let mut q = pred.clone();
            q.probs[i] += step;
            let up = mask_loss(std::slice::from_ref(&q), t, &weights, 0.8).unwrap();
            q.probs[i] -= 2.0 * step;
            let down = mask_loss(std::slice::from_ref(&q), t, &weights, 0.8).unwrap();
            let e = rel_err((up - down) / (2.0 * step), g[0][i]);
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

/// Loss used to probe the head: a fixed random weighting of every output.
fn probe_loss(head: &MaskHead, high: &RoIFeature, low: &RoIFeature, coeff: &[f64]) -> f64 {
    let fused = head.fuse_multiscale(high, low).unwrap();
    let set = head.atrous_upsample(&fused).unwrap();
    set.probs.data.iter().zip(coeff).map(|(p, c)| p * c).sum()
}

fn roi(rng: &mut ChaCha8Rng, c: usize, canvas: usize, vh: usize, vw: usize) -> RoIFeature {
    let mut grid = Tensor3::zeros(c, canvas, canvas);
    for ch in 0..c {
        for r in 0..vh {
            for col in 0..vw {
                grid.set(ch, r, col, rng.gen_range(-1.0..1.0));
            }
        }
    }
    RoIFeature {
        grid,
        valid_h: vh,
        valid_w: vw,
        source_box: BBox::new(0.0, 0.0, 32.0, 24.0),
    }
}

fn seghead_gradient() -> Result<(f64, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let cfg = MaskHeadConfig {
        canvas: 4,
        mid_channels: [3, 2],
        classes: 2,
    };
    let mut head = MaskHead::new(2, 3, &cfg);
    head.init(&mut rng);
    // Keep every ReLU away from its kink on the zero padding.
    head.visit_mut(&mut |name, v| {
        if name.ends_with("bias") {
            v.iter_mut().for_each(|b| *b = rng.gen_range(0.05..0.2));
        }
    });
    let n = head.param_count();
    if n > 1000 {
        return Err(format!("probe head has {n} parameters"));
    }
    let high = roi(&mut rng, 3, 4, 3, 4);
    let low = roi(&mut rng, 2, 4, 3, 4);
    let side = 4 * 4;
    let coeff: Vec<f64> = (0..2 * side * side).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut grad = MaskHead::new(2, 3, &cfg);
    grad.zero();
    let (fused, fuse_trace) = head.fuse_traced(&high, &low).unwrap();
    let (set, up_trace) = head.upsample_traced(&fused).unwrap();
    let g_probs = Tensor3::from_vec(set.probs.c, set.probs.h, set.probs.w, coeff.clone());
    let g_fused = head.upsample_backward(&up_trace, &set.probs, &g_probs, &mut grad);
    let g_low = head.fuse_backward(&fuse_trace, &g_fused, &mut grad);
    let analytic = grad.flat();

    let w0 = head.flat();
    let step = 1e-6;
    let mut worst = 0.0f64;
    let mut probe = head.clone();
    for i in 0..w0.len() {
        let mut w = w0.clone();
        w[i] += step;
        probe.load_flat(&w).unwrap();
        let up = probe_loss(&probe, &high, &low, &coeff);
        w[i] -= 2.0 * step;
        probe.load_flat(&w).unwrap();
        let down = probe_loss(&probe, &high, &low, &coeff);
        worst = worst.max(rel_err((up - down) / (2.0 * step), analytic[i]));
    }
    for (which, input) in [(0, &high), (1, &low)] {
        for idx in 0..input.grid.data.len() {
            let mut plus = input.clone();
            plus.grid.data[idx] += step;
            let mut minus = input.clone();
            minus.grid.data[idx] -= step;
            let (up, down) = if which == 0 {
                (probe_loss(&head, &plus, &low, &coeff), probe_loss(&head, &minus, &low, &coeff))
            } else {
                (probe_loss(&head, &high, &plus, &coeff), probe_loss(&head, &high, &minus, &coeff))
            };
            let an = if which == 0 { g_fused.data[idx] } else { g_low.data[idx] };
            worst = worst.max(rel_err((up - down) / (2.0 * step), an));
        }
    }
    Ok((worst, n))
}

fn gradient_checks() -> Check {
    let loss_err = mask_loss_gradient()?;
    ensure(loss_err <= 1e-4, || format!("mask loss gradient relative error {loss_err:.2e}"))?;
    let (net_err, n) = seghead_gradient()?;
    ensure(net_err <= 1e-3, || format!("mask head gradient relative error {net_err:.2e}"))?;
    Ok(format!("loss rel err {loss_err:.1e}, head rel err {net_err:.1e} over {n} params + inputs"))
}

// 4 -----------------------------------------------------------------------

fn voting_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for pattern in 0..16u32 {
        let mut masks: Vec<BinaryMask> = (0..4).map(|_| random_mask(&mut rng, 16, 16)).collect();
        let (px, py) = (rng.gen_range(0..16), rng.gen_range(0..16));
        for (v, m) in masks.iter_mut().enumerate() {
            m.set(px, py, pattern >> v & 1 == 1);
        }
        for k in 1..=4 {
            let fused = vote_masks(&masks, k).map_err(|e| e.to_string())?;
            for y in 0..16 {
                for x in 0..16 {
                    let votes = masks.iter().filter(|m| m.get(x, y)).count();
                    ensure(fused.get(x, y) == (votes >= k), || {
                        format!("pattern {pattern:04b}, K={k}, pixel ({x}, {y}): {votes} votes")
                    })?;
                }
            }
        }
    }
    for case in 0..200 {
        let n = rng.gen_range(1..=4);
        let masks: Vec<BinaryMask> = (0..n).map(|_| random_mask(&mut rng, 16, 16)).collect();
        let all = vote_masks(&masks, n).unwrap();
        let any = vote_masks(&masks, 1).unwrap();
        let mut prev = any.clone();
        for k in 1..=n {
            let fused = vote_masks(&masks, k).unwrap();
            for y in 0..16 {
                for x in 0..16 {
                    let inter = masks.iter().all(|m| m.get(x, y));
                    let union = masks.iter().any(|m| m.get(x, y));
                    ensure(!inter || fused.get(x, y), || format!("case {case}: intersection not in fused"))?;
                    ensure(!fused.get(x, y) || union, || format!("case {case}: fused outside union"))?;
                    ensure(!fused.get(x, y) || prev.get(x, y), || format!("case {case}: not monotone in K"))?;
                }
            }
            prev = fused;
        }
        ensure(all.count() <= any.count(), || format!("case {case}: K=n larger than K=1"))?;
        // Adding a foreground pixel to one input never removes a fused pixel.
        let mut grown = masks.clone();
        let (x, y) = (rng.gen_range(0..16), rng.gen_range(0..16));
        grown[0].set(x, y, true);
        let k = rng.gen_range(1..=n);
        let (a, b) = (vote_masks(&masks, k).unwrap(), vote_masks(&grown, k).unwrap());
        ensure(pixel_set(&a).is_subset(&pixel_set(&b)), || format!("case {case}: not monotone in inputs"))?;
    }
    Ok("16 patterns x 4 thresholds exact; 200 sandwich/monotonicity cases".into())
}

// 5 -----------------------------------------------------------------------

fn raster_ratio(b: &BBox, regions: &[BBox], n: usize) -> f64 {
    let mut hit = 0usize;
    for i in 0..n {
        for j in 0..n {
            let x = b.x0 + (j as f64 + 0.5) * b.width() / n as f64;
            let y = b.y0 + (i as f64 + 0.5) * b.height() / n as f64;
            if regions.iter().any(|r| r.x0 <= x && x < r.x1 && r.y0 <= y && y < r.y1) {
                hit += 1;
            }
        }
    }
    hit as f64 / (n * n) as f64
}

fn int_box(rng: &mut ChaCha8Rng, min_side: i32) -> BBox {
    let x0 = rng.gen_range(0..200);
    let y0 = rng.gen_range(0..200);
    let w = rng.gen_range(min_side..120);
    let h = rng.gen_range(min_side..120);
    BBox::new(x0 as f64, y0 as f64, (x0 + w) as f64, (y0 + h) as f64)
}

fn attention_filter() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut decided = 0;
    for case in 0..1000 {
        let fm = int_box(&mut rng, 20);
        let regions: Vec<BBox> = (0..rng.gen_range(1..5))
            .map(|_| {
                // Bias regions towards the box so that ratios spread over [0, 1].
                let b = int_box(&mut rng, 10);
                let dx = fm.x0 - b.x0 + rng.gen_range(-40.0..40.0f64).round();
                let dy = fm.y0 - b.y0 + rng.gen_range(-40.0..40.0f64).round();
                BBox::new(b.x0 + dx, b.y0 + dy, b.x1 + dx, b.y1 + dy)
            })
            .collect();
        let exact = overlap_ratio(&fm, &regions).map_err(|e| e.to_string())?;
        let raster = raster_ratio(&fm, &regions, 400);
        let err = (exact - raster).abs();
        worst = worst.max(err);
        ensure(err <= 0.02, || format!("case {case}: ratio {exact} vs raster {raster}"))?;
        let mut dets = vec![Detection {
            bbox: fm,
            label: Label::Fingermark,
            score: 0.9,
        }];
        dets.extend(regions.iter().map(|r| Detection {
            bbox: *r,
            label: Label::Attention,
            score: 0.9,
        }));
        let kept = attention_decisions(&dets, 0.7)[0].kept;
        if (raster - 0.7).abs() > 0.02 {
            decided += 1;
            ensure(kept == (raster >= 0.7), || format!("case {case}: kept={kept} but raster ratio {raster}"))?;
        }
        for s in [0.5, 1.25, 1.5, 2.0, 3.0] {
            let scaled: Vec<Detection> = dets
                .iter()
                .map(|d| Detection {
                    bbox: BBox::new(d.bbox.x0 * s, d.bbox.y0 * s, d.bbox.x1 * s, d.bbox.y1 * s),
                    ..*d
                })
                .collect();
            let dec = attention_decisions(&scaled, 0.7)[0];
            ensure(dec.ratio == exact && dec.kept == kept, || {
                format!("case {case}: scale {s} changes ratio {exact} -> {}", dec.ratio)
            })?;
        }
    }
    Ok(format!("1000 sets, max |exact - raster| {worst:.4}, {decided} decisions compared, scale-invariant"))
}

// 6 -----------------------------------------------------------------------

fn loss_algebra() -> Check {
    let cfg = LossConfig::default();
    let total = total_loss(1.0, 1.0, 1.0, &cfg, vec![]).map_err(|e| e.to_string())?.l_total;
    ensure(total == 5.0, || format!("L_all for unit components = {total}"))?;
    let w = class_weights(&[90, 10]).map_err(|e| e.to_string())?;
    let (a, b) = (0.1f64.exp(), 0.9f64.exp());
    let want = [a / (a + b), b / (a + b)];
    ensure((w[0] - want[0]).abs() <= 1e-4 && (w[1] - want[1]).abs() <= 1e-4, || {
        format!("weights {w:?}, softmax oracle {want:?}")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..200 {
        let (h, wd, classes) = (4, 5, 3);
        let pred = MaskPrediction {
            classes,
            height: h,
            width: wd,
            probs: (0..classes * h * wd).map(|_| rng.gen_range(0.01..0.99)).collect(),
        };
        let target = MaskTarget {
            height: h,
            width: wd,
            labels: (0..h * wd).map(|_| rng.gen_range(0..=classes as u8)).collect(),
        };
        let j = rng.gen_range(0..classes);
        let own = j as u8 + 1;
        let mut moved = target.clone();
        for l in moved.labels.iter_mut() {
            if *l != 0 && *l != own {
                let others: Vec<u8> = (1..=classes as u8).filter(|&c| c != own).collect();
                *l = others[rng.gen_range(0..others.len())];
            }
        }
        let weight = rng.gen_range(0.1..1.0);
        let summand = |t: &MaskTarget| weight * class_term(&pred, t, j) + cfg.lambda * background_term(&pred, t, j);
        ensure(summand(&target) == summand(&moved), || format!("case {case}: class {j} summand changed"))?;
    }
    Ok(format!("L_all = 5, weights ({:.4}, {:.4}), discard invariance exact on 200 cases", w[0], w[1]))
}

// 7-9 ---------------------------------------------------------------------

struct Trained {
    held_out: Vec<GroundTruthSample>,
    model: SegFinNet,
    train_seconds: f64,
}

fn samples(data: &[GroundTruthSample]) -> Vec<EvalSample<'_>> {
    data.iter()
        .map(|s| EvalSample {
            id: s.id(),
            image: &s.image,
            ground_truth: Some(&s.mask),
        })
        .collect()
}

fn train_desk_scale() -> Result<Trained, String> {
    let cfg = RunConfig::default();
    let train_set = generate_dataset(&cfg.synth, 300, 1).map_err(|e| e.to_string())?;
    let held_out = generate_dataset(&cfg.synth, 50, 2).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let result = train(&train_set, &cfg.model, &cfg.train, None).map_err(|e| e.to_string())?;
    Ok(Trained {
        held_out,
        model: result.model,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

fn end_to_end(t: &Trained) -> Check {
    let fusion = FusionConfig::default();
    let set = samples(&t.held_out);
    let trained = evaluate(&set, &t.model, &fusion, Ablation::Full).map_err(|e| e.to_string())?;
    let untrained_model = SegFinNet::initialized(ModelConfig::default(), RunConfig::default().train.seed)
        .map_err(|e| e.to_string())?;
    let untrained = evaluate(&set, &untrained_model, &fusion, Ablation::Full).map_err(|e| e.to_string())?;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let detail = format!(
        "held-out IoU {:.4} (untrained {:.4}), training {:.1} min on {cores} core(s)",
        trained.iou,
        untrained.iou,
        t.train_seconds / 60.0
    );
    ensure(trained.iou >= 0.60, || format!("{detail}: below 0.60"))?;
    ensure(trained.iou - untrained.iou >= 0.30, || format!("{detail}: gain below 0.30"))?;
    ensure(t.train_seconds <= 3600.0, || format!("{detail}: over 60 min"))?;
    Ok(detail)
}

fn ablation_trend(t: &Trained) -> Check {
    let set = samples(&t.held_out);
    let fusion = FusionConfig::default();
    let reports: Vec<MetricsReport> = Ablation::ALL
        .into_iter()
        .map(|a| evaluate(&set, &t.model, &fusion, a))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    print!("{}", format_table(&reports));
    let labels: Vec<&str> = reports.iter().map(|r| r.config_label.as_str()).collect();
    ensure(labels == ["w/o AM & VF", "with AM", "with VF", "full"], || format!("labels {labels:?}"))?;
    for r in &reports {
        ensure(r.per_image.len() == set.len(), || format!("{}: {} rows", r.config_label, r.per_image.len()))?;
        ensure(r.per_image.iter().all(|m| m.time_ms > 0.0), || format!("{}: missing timing", r.config_label))?;
    }
    let (neither, full) = (reports[0].iou, reports[3].iou);
    ensure(full >= neither - 0.02, || format!("IoU full {full:.4} < w/o AM & VF {neither:.4} - 0.02"))?;
    Ok(format!("IoU full {full:.4} vs w/o AM & VF {neither:.4}"))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let params = SynthParams {
        image_size: 128,
        marker_probability: 0.8,
        ..SynthParams::default()
    };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = generate_dataset(&params, 20, 9).map_err(|e| e.to_string())?;
    let b = generate_dataset(&params, 20, 9).map_err(|e| e.to_string())?;
    ensure(a == b, || "datasets differ in memory".into())?;
    write_dataset(&a, &tmp.path().join("a"), Some(&params)).map_err(|e| e.to_string())?;
    write_dataset(&b, &tmp.path().join("b"), Some(&params)).map_err(|e| e.to_string())?;
    ensure(dir_bytes(&tmp.path().join("a")) == dir_bytes(&tmp.path().join("b")), || "dataset files differ".into())?;

    let cfg = TrainConfig {
        total_iters: 30,
        phase1_iters: 10,
        eval_every: 15,
        seed: 4,
        ..TrainConfig::default()
    };
    let model_cfg = ModelConfig::default();
    let r1 = train(&a, &model_cfg, &cfg, None).map_err(|e| e.to_string())?;
    let r2 = train(&b, &model_cfg, &cfg, None).map_err(|e| e.to_string())?;
    ensure(r1.log == r2.log, || "loss logs differ".into())?;
    ensure(r1.model == r2.model, || "trained weights differ".into())?;

    let set = samples(&a[..6]);
    let fusion = FusionConfig {
        detector: segfinnet::detector::DetectorConfig {
            detection_threshold: 0.3,
            ..Default::default()
        },
        ..FusionConfig::default()
    };
    for ab in Ablation::ALL {
        let e1 = evaluate(&set, &r1.model, &fusion, ab).map_err(|e| e.to_string())?;
        let e2 = evaluate(&set, &r1.model, &fusion, ab).map_err(|e| e.to_string())?;
        ensure(e1.metric_values() == e2.metric_values(), || format!("{}: metrics differ", ab.label()))?;
    }
    Ok("datasets, 30-iteration logs/weights and 4 eval configurations bit-identical".into())
}

// 10 ----------------------------------------------------------------------

fn config_snapshot() -> Check {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/run_config.json");
    let golden = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let actual = RunConfig::default().to_json() + "\n";
    ensure(golden == actual, || "default RunConfig differs from golden file".into())?;
    let c = RunConfig::default();
    let l = c.train.loss;
    ensure((l.alpha, l.beta, l.gamma, l.lambda) == (2.0, 1.0, 2.0, 0.8), || format!("loss {l:?}"))?;
    ensure(c.fusion.votes == 3, || "K".into())?;
    ensure(c.fusion.detector.detection_threshold == 0.7 && c.fusion.pixel_threshold == 0.5, || "thresholds".into())?;
    ensure(c.model.anchors.scales == [8.0, 16.0, 32.0, 64.0, 128.0], || "anchor scales".into())?;
    ensure((c.train.lr_phase1, c.train.lr_phase2, c.train.weight_decay) == (0.001, 0.0001, 0.0001), || {
        "schedule".into()
    })?;
    Ok("golden file matches; published constants present".into())
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut failures = 0;
    let mut report = |n: usize, name: &str, start: Instant, r: Check| {
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("PASS [{n:>2}] {name}: {d} ({secs:.1} s)"),
            Err(d) => {
                failures += 1;
                println!("FAIL [{n:>2}] {name}: {d} ({secs:.1} s)");
            }
        }
    };
    let quick: [(usize, &str, fn() -> Check); 6] = [
        (1, "metrics oracle", metrics_oracle),
        (2, "bilinear sampling and RoI alignment", bilinear_and_roialign),
        (3, "gradient checks", gradient_checks),
        (4, "voting fusion", voting_exactness),
        (5, "attention filter", attention_filter),
        (6, "loss algebra", loss_algebra),
    ];
    for (n, name, f) in quick {
        if want(n) {
            let t = Instant::now();
            report(n, name, t, f());
        }
    }
    if want(7) || want(8) {
        let t = Instant::now();
        match train_desk_scale() {
            Ok(trained) => {
                if want(7) {
                    report(7, "desk-scale training", t, end_to_end(&trained));
                }
                if want(8) {
                    let t = Instant::now();
                    report(8, "ablation trend", t, ablation_trend(&trained));
                }
            }
            Err(e) => {
                for (n, name) in [(7, "desk-scale training"), (8, "ablation trend")] {
                    if want(n) {
                        report(n, name, t, Err(format!("training failed: {e}")));
                    }
                }
            }
        }
    }
    if want(9) {
        let t = Instant::now();
        report(9, "determinism", t, determinism());
    }
    if want(10) {
        let t = Instant::now();
        report(10, "configuration snapshot", t, config_snapshot());
    }
    if failures > 0 {
        println!("{failures} acceptance criterion/criteria failed");
        std::process::exit(1);
    }
}
