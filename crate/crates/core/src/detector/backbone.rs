//! Small residual convolutional backbone with two pyramid levels
//! (strides 4 and 8).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureLevel, FeatureMaps};
use crate::error::Result;
use crate::imaging::LatentImage;
use crate::nn::{relu, relu_backward, Conv2d, ConvCache, Parameters, Tensor3};

/// Largest stride produced by the backbone; inputs are padded to a multiple of it.
pub const MAX_STRIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    /// Channels of the stride-4 level.
    pub low_channels: usize,
    /// Channels of the stride-8 level.
    pub high_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stem_channels: 8,
            low_channels: 16,
            high_channels: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub stem: Conv2d,
    pub down4: Conv2d,
    pub res4a: Conv2d,
    pub res4b: Conv2d,
    pub down8: Conv2d,
    pub res8a: Conv2d,
    pub res8b: Conv2d,
    pub context: Conv2d,
}

/// Forward activations kept for back-propagation.
pub struct BackboneTrace {
    stem: (ConvCache, Tensor3),
    down4: (ConvCache, Tensor3),
    res4a: (ConvCache, Tensor3),
    res4b: ConvCache,
    low: Tensor3,
    down8: (ConvCache, Tensor3),
    res8a: (ConvCache, Tensor3),
    res8b: ConvCache,
    mid8: Tensor3,
    context: ConvCache,
    high: Tensor3,
}

/// Maps 8-bit intensities to roughly unit range and zero-pads the bottom and
/// right edges to a multiple of [`MAX_STRIDE`].
pub fn image_tensor(img: &LatentImage) -> Tensor3 {
    let h = img.height().div_ceil(MAX_STRIDE) * MAX_STRIDE;
    let w = img.width().div_ceil(MAX_STRIDE) * MAX_STRIDE;
    let mut t = Tensor3::zeros(1, h, w);
    for y in 0..img.height() {
        for x in 0..img.width() {
            t.data[y * w + x] = (img.get(x, y) as f64 - 128.0) / 64.0;
        }
    }
    t
}

fn checked(t: &Tensor3, layer: &str) -> Result<()> {
    t.ensure_finite(&format!("backbone.{layer}"))
}

impl Backbone {
    pub fn new(cfg: &BackboneConfig) -> Self {
        let (c1, c4, c8) = (cfg.stem_channels, cfg.low_channels, cfg.high_channels);
        Backbone {
            stem: Conv2d::new(1, c1, 3, 2, 1),
            down4: Conv2d::new(c1, c4, 3, 2, 1),
            res4a: Conv2d::new(c4, c4, 3, 1, 1),
            res4b: Conv2d::new(c4, c4, 3, 1, 1),
            down8: Conv2d::new(c4, c8, 3, 2, 1),
            res8a: Conv2d::new(c8, c8, 3, 1, 1),
            res8b: Conv2d::new(c8, c8, 3, 1, 1),
            context: Conv2d::new(c8, c8, 3, 1, 2),
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.stem.init(rng, 1.0);
        self.down4.init(rng, 1.0);
        self.res4a.init(rng, 1.0);
        // residual branches start small so the block begins near identity
        self.res4b.init(rng, 0.3);
        self.down8.init(rng, 1.0);
        self.res8a.init(rng, 1.0);
        self.res8b.init(rng, 0.3);
        self.context.init(rng, 1.0);
    }

    pub fn forward(&self, input: &Tensor3) -> Result<FeatureMaps> {
        let (maps, _) = self.forward_traced(input)?;
        Ok(maps)
    }

    pub fn forward_traced(&self, input: &Tensor3) -> Result<(FeatureMaps, BackboneTrace)> {
        let conv_relu = |layer: &Conv2d, x: &Tensor3, name: &str| -> Result<(ConvCache, Tensor3)> {
            let (mut y, c) = layer.forward(x);
            relu(&mut y);
            checked(&y, name)?;
            Ok((c, y))
        };
        let stem = conv_relu(&self.stem, input, "stem")?;
        let down4 = conv_relu(&self.down4, &stem.1, "down4")?;
        let res4a = conv_relu(&self.res4a, &down4.1, "res4a")?;
        let (mut low, res4b) = self.res4b.forward(&res4a.1);
        low.add_assign(&down4.1);
        relu(&mut low);
        checked(&low, "res4b")?;

        let down8 = conv_relu(&self.down8, &low, "down8")?;
        let res8a = conv_relu(&self.res8a, &down8.1, "res8a")?;
        let (mut mid8, res8b) = self.res8b.forward(&res8a.1);
        mid8.add_assign(&down8.1);
        relu(&mut mid8);
        checked(&mid8, "res8b")?;
        let (mut high, context) = self.context.forward(&mid8);
        relu(&mut high);
        checked(&high, "context")?;

        let maps = FeatureMaps {
            levels: vec![
                FeatureLevel {
                    stride: 4,
                    map: low.clone(),
                },
                FeatureLevel {
                    stride: 8,
                    map: high.clone(),
                },
            ],
        };
        let trace = BackboneTrace {
            stem,
            down4,
            res4a,
            res4b,
            low,
            down8,
            res8a,
            res8b,
            mid8,
            context,
            high,
        };
        Ok((maps, trace))
    }

    /// Back-propagates level gradients into `grad`; the input gradient is dropped.
    pub fn backward(
        &self,
        trace: &BackboneTrace,
        mut g_low: Tensor3,
        mut g_high: Tensor3,
        grad: &mut Backbone,
    ) {
        relu_backward(&trace.high, &mut g_high);
        let mut g_mid8 = self.context.backward(&trace.context, &g_high, &mut grad.context);
        relu_backward(&trace.mid8, &mut g_mid8);
        let mut g_a = self.res8b.backward(&trace.res8b, &g_mid8, &mut grad.res8b);
        relu_backward(&trace.res8a.1, &mut g_a);
        let mut g_down8 = self.res8a.backward(&trace.res8a.0, &g_a, &mut grad.res8a);
        g_down8.add_assign(&g_mid8);
        relu_backward(&trace.down8.1, &mut g_down8);
        let from_high = self.down8.backward(&trace.down8.0, &g_down8, &mut grad.down8);
        g_low.add_assign(&from_high);

        relu_backward(&trace.low, &mut g_low);
        let mut g_a = self.res4b.backward(&trace.res4b, &g_low, &mut grad.res4b);
        relu_backward(&trace.res4a.1, &mut g_a);
        let mut g_down4 = self.res4a.backward(&trace.res4a.0, &g_a, &mut grad.res4a);
        g_down4.add_assign(&g_low);
        relu_backward(&trace.down4.1, &mut g_down4);
        let mut g_stem = self.down4.backward(&trace.down4.0, &g_down4, &mut grad.down4);
        relu_backward(&trace.stem.1, &mut g_stem);
        self.stem.backward(&trace.stem.0, &g_stem, &mut grad.stem);
    }
}

impl Parameters for Backbone {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (name, layer) in [
            ("stem", &self.stem),
            ("down4", &self.down4),
            ("res4a", &self.res4a),
            ("res4b", &self.res4b),
            ("down8", &self.down8),
            ("res8a", &self.res8a),
            ("res8b", &self.res8b),
            ("context", &self.context),
        ] {
            layer.visit(&mut |p, v| f(&format!("{name}.{p}"), v));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        for (name, layer) in [
            ("stem", &mut self.stem),
            ("down4", &mut self.down4),
            ("res4a", &mut self.res4a),
            ("res4b", &mut self.res4b),
            ("down8", &mut self.down8),
            ("res8a", &mut self.res8a),
            ("res8b", &mut self.res8b),
            ("context", &mut self.context),
        ] {
            layer.visit_mut(&mut |p, v| f(&format!("{name}.{p}"), v));
        }
    }
}
