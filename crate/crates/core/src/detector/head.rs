//! Per-anchor classification and box regression over the stride-8 level.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{relu, relu_backward, Conv2d, ConvCache, Parameters, Tensor3};

/// Background, fingermark, attention.
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalHead {
    pub anchors_per_cell: usize,
    pub conv: Conv2d,
    pub out: Conv2d,
}

/// Raw head outputs on the feature grid.
///
/// Channel `a * 3 + k` holds the logit of class `k` for anchor shape `a`;
/// channel `3A + a * 4 + t` holds box delta component `t`.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub anchors_per_cell: usize,
    pub raw: Tensor3,
}

pub struct HeadTrace {
    conv: (ConvCache, Tensor3),
    out: ConvCache,
}

impl HeadOutput {
    pub fn cells(&self) -> usize {
        self.raw.h * self.raw.w
    }

    pub fn num_anchors(&self) -> usize {
        self.cells() * self.anchors_per_cell
    }

    fn split(&self, anchor: usize) -> (usize, usize) {
        (anchor / self.anchors_per_cell, anchor % self.anchors_per_cell)
    }

    pub fn logits(&self, anchor: usize) -> [f64; NUM_CLASSES] {
        let (cell, a) = self.split(anchor);
        let n = self.cells();
        std::array::from_fn(|k| self.raw.data[(a * NUM_CLASSES + k) * n + cell])
    }

    pub fn delta(&self, anchor: usize) -> [f64; 4] {
        let (cell, a) = self.split(anchor);
        let n = self.cells();
        let base = NUM_CLASSES * self.anchors_per_cell;
        std::array::from_fn(|t| self.raw.data[(base + a * 4 + t) * n + cell])
    }

    /// Gradient buffer shaped like `raw`, with per-anchor entries filled in.
    pub fn scatter_grad(&self, anchor: usize, logits: &[f64; NUM_CLASSES], delta: &[f64; 4], into: &mut Tensor3) {
        let (cell, a) = self.split(anchor);
        let n = self.cells();
        for k in 0..NUM_CLASSES {
            into.data[(a * NUM_CLASSES + k) * n + cell] += logits[k];
        }
        let base = NUM_CLASSES * self.anchors_per_cell;
        for t in 0..4 {
            into.data[(base + a * 4 + t) * n + cell] += delta[t];
        }
    }
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: [f64; NUM_CLASSES] = std::array::from_fn(|k| (logits[k] - m).exp());
    let s: f64 = e.iter().sum();
    std::array::from_fn(|k| e[k] / s)
}

impl ProposalHead {
    pub fn new(channels: usize, anchors_per_cell: usize) -> Self {
        ProposalHead {
            anchors_per_cell,
            conv: Conv2d::new(channels, channels, 3, 1, 1),
            out: Conv2d::new(channels, anchors_per_cell * (NUM_CLASSES + 4), 1, 1, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.conv.init(rng, 1.0);
        self.out.init(rng, 0.1);
        // start with a strong background prior so untrained scores stay low
        let n = self.anchors_per_cell;
        for a in 0..n {
            self.out.bias[a * NUM_CLASSES] = 2.0;
        }
    }

    pub fn forward(&self, high: &Tensor3) -> (HeadOutput, HeadTrace) {
        let (mut h, c1) = self.conv.forward(high);
        relu(&mut h);
        let (raw, c2) = self.out.forward(&h);
        (
            HeadOutput {
                anchors_per_cell: self.anchors_per_cell,
                raw,
            },
            HeadTrace {
                conv: (c1, h),
                out: c2,
            },
        )
    }

    pub fn backward(&self, trace: &HeadTrace, g_raw: &Tensor3, grad: &mut ProposalHead) -> Tensor3 {
        let mut g = self.out.backward(&trace.out, g_raw, &mut grad.out);
        relu_backward(&trace.conv.1, &mut g);
        self.conv.backward(&trace.conv.0, &g, &mut grad.conv)
    }
}

impl Parameters for ProposalHead {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.conv.visit(&mut |p, v| f(&format!("conv.{p}"), v));
        self.out.visit(&mut |p, v| f(&format!("out.{p}"), v));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        self.conv.visit_mut(&mut |p, v| f(&format!("conv.{p}"), v));
        self.out.visit_mut(&mut |p, v| f(&format!("out.{p}"), v));
    }
}
