//! Minimal dense layers with explicit forward and backward passes.
//!
//! Everything runs in `f64` so that finite-difference checks are meaningful.
//! Convolutions lower to `im2col` + GEMM; transposed convolutions are the
//! exact adjoint of a convolution with the same geometry.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-major 3-D block `c × h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor3 {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor shape/data mismatch");
        Tensor3 { c, h, w, data }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.c == other.c && self.h == other.h && self.w == other.w
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn ensure_finite(&self, stage: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::numeric(
                stage,
                format!("non-finite activation {} at flat index {i}", self.data[i]),
            )),
        }
    }
}

/// Box-Muller standard normal draw.
pub(crate) fn normal_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `C = alpha * op(A) * op(B) + beta * C` on row-major buffers.
///
/// `op(A)` is `m × k`, `op(B)` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the asserted buffer extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sliding-window geometry shared by `im2col` and `col2im`.
///
/// `src` is the spatially larger side of a convolution (the input of a
/// forward convolution, the output of a transposed one).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeom {
    pub channels: usize,
    pub src_h: usize,
    pub src_w: usize,
    pub dst_h: usize,
    pub dst_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl WindowGeom {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.dst_h * self.dst_w
    }

    /// Valid destination range `[lo, hi)` along one axis for tap offset `off`.
    #[inline]
    fn valid_range(&self, off: isize, src: usize, dst: usize) -> (usize, usize) {
        // src position = o * stride - pad + off must lie in [0, src)
        let s = self.stride as isize;
        let p = self.pad as isize;
        let mut lo = 0isize;
        let start = p - off;
        if start > 0 {
            lo = (start + s - 1) / s;
        }
        let mut hi = dst as isize;
        // o * s - p + off <= src - 1  =>  o <= (src - 1 + p - off) / s
        let lim = src as isize - 1 + p - off;
        if lim < 0 {
            hi = 0;
        } else {
            hi = hi.min(lim / s + 1);
        }
        if hi < lo {
            hi = lo;
        }
        (lo as usize, hi as usize)
    }
}

pub fn im2col(src: &[f64], g: &WindowGeom) -> Vec<f64> {
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let k = g.kernel;
    let ncol = g.cols();
    for c in 0..g.channels {
        let plane = &src[c * g.src_h * g.src_w..(c + 1) * g.src_h * g.src_w];
        for ky in 0..k {
            let offy = (ky * g.dilation) as isize;
            let (oy0, oy1) = g.valid_range(offy, g.src_h, g.dst_h);
            for kx in 0..k {
                let offx = (kx * g.dilation) as isize;
                let (ox0, ox1) = g.valid_range(offx, g.src_w, g.dst_w);
                let row = (c * k + ky) * k + kx;
                let out = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in oy0..oy1 {
                    let sy = (oy * g.stride) as isize - g.pad as isize + offy;
                    let srow = &plane[sy as usize * g.src_w..(sy as usize + 1) * g.src_w];
                    let orow = &mut out[oy * g.dst_w..(oy + 1) * g.dst_w];
                    if g.stride == 1 {
                        let sx0 = (ox0 as isize - g.pad as isize + offx) as usize;
                        orow[ox0..ox1].copy_from_slice(&srow[sx0..sx0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            let sx = (ox * g.stride) as isize - g.pad as isize + offx;
                            orow[ox] = srow[sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `dst` (src-shaped).
pub fn col2im_add(cols: &[f64], g: &WindowGeom, dst: &mut [f64]) {
    let k = g.kernel;
    let ncol = g.cols();
    for c in 0..g.channels {
        let plane = &mut dst[c * g.src_h * g.src_w..(c + 1) * g.src_h * g.src_w];
        for ky in 0..k {
            let offy = (ky * g.dilation) as isize;
            let (oy0, oy1) = g.valid_range(offy, g.src_h, g.dst_h);
            for kx in 0..k {
                let offx = (kx * g.dilation) as isize;
                let (ox0, ox1) = g.valid_range(offx, g.src_w, g.dst_w);
                let row = (c * k + ky) * k + kx;
                let inp = &cols[row * ncol..(row + 1) * ncol];
                for oy in oy0..oy1 {
                    let sy = (oy * g.stride) as isize - g.pad as isize + offy;
                    let srow = &mut plane[sy as usize * g.src_w..(sy as usize + 1) * g.src_w];
                    let irow = &inp[oy * g.dst_w..(oy + 1) * g.dst_w];
                    for ox in ox0..ox1 {
                        let sx = (ox * g.stride) as isize - g.pad as isize + offx;
                        srow[sx as usize] += irow[ox];
                    }
                }
            }
        }
    }
}

fn he_init<R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize, gain: f64) -> Vec<f64> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    (0..n).map(|_| std * normal_sample(rng)).collect()
}

/// 2-D convolution with square kernel, symmetric zero padding and dilation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub has_bias: bool,
    /// `out_c × (in_c · k · k)`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f64>,
    geom: WindowGeom,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, kernel: usize, stride: usize, dilation: usize) -> Self {
        let pad = dilation * (kernel - 1) / 2;
        Conv2d {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            dilation,
            has_bias: true,
            weight: vec![0.0; out_c * in_c * kernel * kernel],
            bias: vec![0.0; out_c],
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self.bias.clear();
        self
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R, gain: f64) {
        let fan_in = self.in_c * self.kernel * self.kernel;
        self.weight = he_init(rng, self.weight.len(), fan_in, gain);
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        let oh = (h + 2 * self.pad - span) / self.stride + 1;
        let ow = (w + 2 * self.pad - span) / self.stride + 1;
        (oh, ow)
    }

    fn geom(&self, h: usize, w: usize) -> WindowGeom {
        let (oh, ow) = self.out_size(h, w);
        WindowGeom {
            channels: self.in_c,
            src_h: h,
            src_w: w,
            dst_h: oh,
            dst_w: ow,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            dilation: self.dilation,
        }
    }

    pub fn forward(&self, x: &Tensor3) -> (Tensor3, ConvCache) {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let g = self.geom(x.h, x.w);
        let cols = if self.kernel == 1 && self.stride == 1 {
            x.data.clone()
        } else {
            im2col(&x.data, &g)
        };
        let n = g.cols();
        let mut y = Tensor3::zeros(self.out_c, g.dst_h, g.dst_w);
        if self.has_bias {
            for (o, b) in self.bias.iter().enumerate() {
                y.data[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = *b);
            }
        }
        gemm(
            self.out_c, g.rows(), n, 1.0, &self.weight, false, &cols, false, 1.0, &mut y.data,
        );
        (y, ConvCache { cols, geom: g })
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, cache: &ConvCache, gy: &Tensor3, grad: &mut Conv2d) -> Tensor3 {
        let g = &cache.geom;
        let n = g.cols();
        gemm(
            self.out_c, n, g.rows(), 1.0, &gy.data, false, &cache.cols, true, 1.0,
            &mut grad.weight,
        );
        if self.has_bias {
            for o in 0..self.out_c {
                grad.bias[o] += gy.data[o * n..(o + 1) * n].iter().sum::<f64>();
            }
        }
        let mut gcols = vec![0.0; g.rows() * n];
        gemm(
            g.rows(), self.out_c, n, 1.0, &self.weight, true, &gy.data, false, 0.0, &mut gcols,
        );
        if self.kernel == 1 && self.stride == 1 {
            return Tensor3::from_vec(self.in_c, g.src_h, g.src_w, gcols);
        }
        let mut gx = Tensor3::zeros(self.in_c, g.src_h, g.src_w);
        col2im_add(&gcols, g, &mut gx.data);
        gx
    }
}

/// Transposed (fractionally strided) convolution with dilation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvTranspose2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub output_pad: usize,
    /// `in_c × (out_c · k · k)`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvTransposeCache {
    input: Tensor3,
    geom: WindowGeom,
}

impl ConvTranspose2d {
    /// Layer whose output is exactly `stride ×` the input size.
    pub fn upsampling(in_c: usize, out_c: usize, kernel: usize, stride: usize, dilation: usize) -> Self {
        // out = (in - 1) * s - 2p + d(k - 1) + 1 + op must equal in * s
        let span = dilation * (kernel - 1) + 1;
        let excess = span as isize - stride as isize;
        let (pad, output_pad) = if excess >= 0 {
            let pad = (excess as usize).div_ceil(2);
            (pad, 2 * pad - excess as usize)
        } else {
            (0, (-excess) as usize)
        };
        ConvTranspose2d {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            dilation,
            output_pad,
            weight: vec![0.0; in_c * out_c * kernel * kernel],
            bias: vec![0.0; out_c],
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R, gain: f64) {
        // each output sees roughly in_c * k * k / stride^2 taps
        let fan_in = (self.in_c * self.kernel * self.kernel / (self.stride * self.stride)).max(1);
        self.weight = he_init(rng, self.weight.len(), fan_in, gain);
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        let f = |n: usize| (n - 1) * self.stride + span + self.output_pad - 2 * self.pad;
        (f(h), f(w))
    }

    fn geom(&self, h: usize, w: usize) -> WindowGeom {
        let (oh, ow) = self.out_size(h, w);
        WindowGeom {
            channels: self.out_c,
            src_h: oh,
            src_w: ow,
            dst_h: h,
            dst_w: w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            dilation: self.dilation,
        }
    }

    pub fn forward(&self, x: &Tensor3) -> (Tensor3, ConvTransposeCache) {
        assert_eq!(x.c, self.in_c, "transposed conv input channels");
        let g = self.geom(x.h, x.w);
        let n = g.cols();
        let mut cols = vec![0.0; g.rows() * n];
        gemm(g.rows(), self.in_c, n, 1.0, &self.weight, true, &x.data, false, 0.0, &mut cols);
        let mut y = Tensor3::zeros(self.out_c, g.src_h, g.src_w);
        col2im_add(&cols, &g, &mut y.data);
        let plane = g.src_h * g.src_w;
        for (o, b) in self.bias.iter().enumerate() {
            y.data[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += b);
        }
        (
            y,
            ConvTransposeCache {
                input: x.clone(),
                geom: g,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &ConvTransposeCache,
        gy: &Tensor3,
        grad: &mut ConvTranspose2d,
    ) -> Tensor3 {
        let g = &cache.geom;
        let n = g.cols();
        let plane = g.src_h * g.src_w;
        for o in 0..self.out_c {
            grad.bias[o] += gy.data[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
        let gcols = im2col(&gy.data, g);
        gemm(
            self.in_c, n, g.rows(), 1.0, &cache.input.data, false, &gcols, true, 1.0,
            &mut grad.weight,
        );
        let mut gx = Tensor3::zeros(self.in_c, g.dst_h, g.dst_w);
        gemm(self.in_c, g.rows(), n, 1.0, &self.weight, false, &gcols, false, 0.0, &mut gx.data);
        gx
    }
}

pub fn relu(x: &mut Tensor3) {
    x.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Tensor3, g: &mut Tensor3) {
    for (gv, &o) in g.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *gv = 0.0;
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Named access to every trainable buffer of a module, in a fixed order.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| n += p.len());
        n
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |_, p| p.iter_mut().for_each(|v| *v = 0.0));
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, p| out.extend_from_slice(p));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut off = 0;
        let mut short = false;
        self.visit_mut(&mut |_, p| {
            let n = p.len();
            if off + n > flat.len() {
                short = true;
                return;
            }
            p.copy_from_slice(&flat[off..off + n]);
            off += n;
        });
        if short || off != flat.len() {
            return Err(Error::validation(format!(
                "parameter count mismatch: expected {}, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        Ok(())
    }

    /// `self += other` element-wise; both must share the same layout.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.flat();
        let mut off = 0;
        self.visit_mut(&mut |_, p| {
            for v in p.iter_mut() {
                *v += src[off];
                off += 1;
            }
        });
    }
}

impl Parameters for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("weight", &self.weight);
        if self.has_bias {
            f("bias", &self.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        f("weight", &mut self.weight);
        if self.has_bias {
            f("bias", &mut self.bias);
        }
    }
}

impl Parameters for ConvTranspose2d {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor3 {
        Tensor3::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn naive_conv(layer: &Conv2d, x: &Tensor3) -> Tensor3 {
        let (oh, ow) = layer.out_size(x.h, x.w);
        let mut y = Tensor3::zeros(layer.out_c, oh, ow);
        let k = layer.kernel;
        for o in 0..layer.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = if layer.has_bias { layer.bias[o] } else { 0.0 };
                    for c in 0..layer.in_c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = (oy * layer.stride + ky * layer.dilation) as isize - layer.pad as isize;
                                let sx = (ox * layer.stride + kx * layer.dilation) as isize - layer.pad as isize;
                                if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                    continue;
                                }
                                s += layer.weight[((o * layer.in_c + c) * k + ky) * k + kx]
                                    * x.get(c, sy as usize, sx as usize);
                            }
                        }
                    }
                    y.set(o, oy, ox, s);
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, d) in &[(3, 1, 1), (3, 2, 1), (3, 1, 2), (1, 1, 1), (3, 2, 2)] {
            let mut layer = Conv2d::new(3, 4, k, s, d);
            layer.init(&mut rng, 1.0);
            layer.bias = (0..4).map(|i| i as f64 * 0.1).collect();
            let x = rand_tensor(&mut rng, 3, 9, 11);
            let (y, _) = layer.forward(&x);
            let want = naive_conv(&layer, &x);
            assert_eq!((y.h, y.w), (want.h, want.w));
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> when both share weights and geometry
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(s, d) in &[(2, 1), (2, 2), (1, 4)] {
            let mut up = ConvTranspose2d::upsampling(3, 2, 3, s, d);
            up.init(&mut rng, 1.0);
            let x = rand_tensor(&mut rng, 3, 6, 5);
            let (y, _) = up.forward(&x);
            assert_eq!((y.h, y.w), (6 * s, 5 * s));
            let z = rand_tensor(&mut rng, 2, y.h, y.w);
            let lhs: f64 = y.data.iter().zip(&z.data).map(|(a, b)| a * b).sum();
            let g = up.geom(x.h, x.w);
            let cols = im2col(&z.data, &g);
            let mut down = vec![0.0; 3 * x.h * x.w];
            gemm(3, g.rows(), g.cols(), 1.0, &up.weight, false, &cols, false, 0.0, &mut down);
            let rhs: f64 = down.iter().zip(&x.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layer = Conv2d::new(2, 3, 3, 2, 1);
        layer.init(&mut rng, 1.0);
        let x = rand_tensor(&mut rng, 2, 7, 6);
        let (y, cache) = layer.forward(&x);
        let r = rand_tensor(&mut rng, y.c, y.h, y.w);
        let loss = |l: &Conv2d, x: &Tensor3| -> f64 {
            let (y, _) = l.forward(x);
            y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
        };
        let mut grad = layer.clone();
        grad.zero();
        let gx = layer.backward(&cache, &r, &mut grad);
        let h = 1e-6;
        for i in [0, 5, 17, 40] {
            let mut p = layer.clone();
            p.weight[i] += h;
            let mut m = layer.clone();
            m.weight[i] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - grad.weight[i]).abs() < 1e-6);
        }
        for i in [0, 13, 50, 83] {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
            assert!((fd - gx.data[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn load_flat_rejects_wrong_length() {
        let mut layer = Conv2d::new(1, 1, 3, 1, 1);
        assert!(layer.load_flat(&[0.0; 3]).is_err());
        assert!(layer.load_flat(&[0.0; 10]).is_ok());
    }
}
