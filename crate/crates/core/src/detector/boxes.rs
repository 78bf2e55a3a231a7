use serde::{Deserialize, Serialize};

/// Axis-aligned box in continuous pixel coordinates; pixel `i` spans `[i, i + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    /// Integer pixel rectangle `[x0, y0, x1, y1)`.
    pub fn from_pixels(r: [u32; 4]) -> Self {
        BBox::new(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite())
            && self.x1 > self.x0
            && self.y1 > self.y0
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        );
        (b.x1 > b.x0 && b.y1 > b.y0).then_some(b)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other).map_or(0.0, |b| b.area());
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox::new(
            self.x0.clamp(0.0, width),
            self.y0.clamp(0.0, height),
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
        )
    }

    pub fn scale(&self, s: f64) -> BBox {
        BBox::new(self.x0 * s, self.y0 * s, self.x1 * s, self.y1 * s)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }
}

/// Regression target relative to an anchor: centre offsets in anchor units
/// and log size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDelta {
    pub const ZERO: BoxDelta = BoxDelta {
        dx: 0.0,
        dy: 0.0,
        dw: 0.0,
        dh: 0.0,
    };

    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoxDelta {
            dx: a[0],
            dy: a[1],
            dw: a[2],
            dh: a[3],
        }
    }
}

/// Largest log-scale accepted when decoding, `ln(1000 / 16)`.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356;

pub fn decode(anchor: &BBox, d: &BoxDelta) -> BBox {
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = acx + d.dx * aw;
    let cy = acy + d.dy * ah;
    let w = aw * d.dw.min(MAX_LOG_SCALE).exp();
    let h = ah * d.dh.min(MAX_LOG_SCALE).exp();
    BBox::from_center(cx, cy, w, h)
}

pub fn encode(anchor: &BBox, target: &BBox) -> BoxDelta {
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    BoxDelta {
        dx: (tcx - acx) / aw,
        dy: (tcy - acy) / ah,
        dw: (target.width() / aw).ln(),
        dh: (target.height() / ah).ln(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_delta_is_identity() {
        let a = BBox::from_center(20.0, 30.0, 8.0, 16.0);
        assert_eq!(decode(&a, &BoxDelta::ZERO), a);
    }

    #[test]
    fn log_width_doubles_width() {
        let a = BBox::new(0.0, 0.0, 8.0, 8.0);
        let d = BoxDelta {
            dw: std::f64::consts::LN_2,
            ..BoxDelta::ZERO
        };
        let b = decode(&a, &d);
        assert!((b.width() - 16.0).abs() < 1e-12);
        assert!((b.height() - 8.0).abs() < 1e-12);
        assert_eq!(b.center(), a.center());
    }

    #[test]
    fn clip_to_image() {
        let b = BBox::new(-5.0, 10.0, 300.0, 270.0).clip(256.0, 256.0);
        assert_eq!(b, BBox::new(0.0, 10.0, 256.0, 256.0));
    }

    #[test]
    fn iou_of_half_overlap() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(0.0, 5.0, 10.0, 15.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn encode_inverts_decode(
            cx in 0.0f64..256.0, cy in 0.0f64..256.0, w in 8.0f64..128.0, h in 8.0f64..128.0,
            dx in -2.0f64..2.0, dy in -2.0f64..2.0, dw in -2.0f64..2.0, dh in -2.0f64..2.0,
        ) {
            let a = BBox::from_center(cx, cy, w, h);
            let d = BoxDelta { dx, dy, dw, dh };
            let back = encode(&a, &decode(&a, &d));
            for (p, q) in back.to_array().iter().zip(d.to_array()) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }
    }
}
