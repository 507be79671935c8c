//! Raw numeric kernels shared by the eager API and the tape.
//!
//! All spatial ops work on `[C, H, W]` row-major buffers. Convolution uses
//! zero "same" padding, so outputs keep the input's spatial extent.

use crate::error::{Error, Result};
use crate::tensor::{ConvKernel, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn new(input: &Tensor, weight: &Tensor) -> Result<Self> {
        let (c_in, h, w) = input.chw()?;
        let [c_out, k_in, kh, kw] = *weight.dims() else {
            return Err(Error::Shape(format!("kernel weight must be 4-D, got {:?}", weight.dims())));
        };
        if k_in != c_in {
            return Err(Error::ChannelMismatch { input: c_in, kernel: k_in });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::EvenKernel(kh, kw));
        }
        Ok(ConvGeom { c_in, c_out, h, w, kh, kw })
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Visits every (output plane, input plane, tap) triple with the row/column
    /// ranges where the shifted source stays inside the map.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, Span)) {
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let (h, w) = (self.h as isize, self.w as isize);
        for o in 0..self.c_out {
            for c in 0..self.c_in {
                for ky in 0..self.kh {
                    let dy = ky as isize - ph;
                    let (y0, y1) = (0.max(-dy), h.min(h - dy));
                    if y0 >= y1 {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let dx = kx as isize - pw;
                        let (x0, x1) = (0.max(-dx), w.min(w - dx));
                        if x0 >= x1 {
                            continue;
                        }
                        let tap = ((o * self.c_in + c) * self.kh + ky) * self.kw + kx;
                        f(o, c, tap, Span { dy, dx, y0, y1, x0, x1 });
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Span {
    dy: isize,
    dx: isize,
    y0: isize,
    y1: isize,
    x0: isize,
    x1: isize,
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let hw = g.hw();
    let w = g.w as isize;
    let mut out = vec![0.0; g.c_out * hw];
    if let Some(b) = bias {
        for (o, plane) in out.chunks_mut(hw).enumerate() {
            plane.fill(b[o]);
        }
    }
    g.for_each_tap(|o, c, tap, s| {
        let wv = weight[tap];
        if wv == 0.0 {
            return;
        }
        let src_plane = &x[c * hw..(c + 1) * hw];
        let dst_plane = &mut out[o * hw..(o + 1) * hw];
        let len = (s.x1 - s.x0) as usize;
        for y in s.y0..s.y1 {
            let si = ((y + s.dy) * w + s.x0 + s.dx) as usize;
            let di = (y * w + s.x0) as usize;
            let src = &src_plane[si..si + len];
            let dst = &mut dst_plane[di..di + len];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += wv * v;
            }
        }
    });
    out
}

/// Gradient w.r.t. the convolution input.
pub(crate) fn conv2d_backward_input(g: &ConvGeom, grad_out: &[f64], weight: &[f64]) -> Vec<f64> {
    let hw = g.hw();
    let w = g.w as isize;
    let mut gx = vec![0.0; g.c_in * hw];
    g.for_each_tap(|o, c, tap, s| {
        let wv = weight[tap];
        if wv == 0.0 {
            return;
        }
        let go = &grad_out[o * hw..(o + 1) * hw];
        let dst_plane = &mut gx[c * hw..(c + 1) * hw];
        let len = (s.x1 - s.x0) as usize;
        for y in s.y0..s.y1 {
            let si = (y * w + s.x0) as usize;
            let di = ((y + s.dy) * w + s.x0 + s.dx) as usize;
            for (d, &v) in dst_plane[di..di + len].iter_mut().zip(&go[si..si + len]) {
                *d += wv * v;
            }
        }
    });
    gx
}

/// Gradients w.r.t. the weights and (summed) bias.
pub(crate) fn conv2d_backward_params(g: &ConvGeom, grad_out: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hw = g.hw();
    let w = g.w as isize;
    let mut gw = vec![0.0; g.c_out * g.c_in * g.kh * g.kw];
    g.for_each_tap(|o, c, tap, s| {
        let go = &grad_out[o * hw..(o + 1) * hw];
        let src_plane = &x[c * hw..(c + 1) * hw];
        let len = (s.x1 - s.x0) as usize;
        let mut acc = 0.0;
        for y in s.y0..s.y1 {
            let gi = (y * w + s.x0) as usize;
            let si = ((y + s.dy) * w + s.x0 + s.dx) as usize;
            acc += go[gi..gi + len].iter().zip(&src_plane[si..si + len]).map(|(a, b)| a * b).sum::<f64>();
        }
        gw[tap] += acc;
    });
    let gb = grad_out.chunks(hw).map(|p| p.iter().sum()).collect();
    (gw, gb)
}

/// Zero-padded "same" 2-D convolution (cross-correlation) of a `[C_in, H, W]` input.
pub fn conv2d(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    let g = ConvGeom::new(input, &kernel.weight)?;
    let out = conv2d_forward(&g, input.data(), kernel.weight.data(), kernel.bias.as_ref().map(|b| b.data()));
    Ok(Tensor::from_parts(vec![g.c_out, g.h, g.w], out))
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// `beta * softmax(alpha * x)` across channels, independently at each location.
pub fn scaled_softmax(x: &Tensor, alpha: f64, beta: f64) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    Ok(Tensor::from_parts(x.dims().to_vec(), scaled_softmax_raw(x.data(), c, h * w, alpha, beta)))
}

pub(crate) fn scaled_softmax_raw(x: &[f64], c: usize, hw: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut max = vec![f64::NEG_INFINITY; hw];
    for ch in 0..c {
        for (m, &v) in max.iter_mut().zip(&x[ch * hw..(ch + 1) * hw]) {
            *m = m.max(v);
        }
    }
    let mut denom = vec![0.0; hw];
    for ch in 0..c {
        let src = &x[ch * hw..(ch + 1) * hw];
        let dst = &mut out[ch * hw..(ch + 1) * hw];
        for i in 0..hw {
            let e = (alpha * (src[i] - max[i])).exp();
            dst[i] = e;
            denom[i] += e;
        }
    }
    for ch in 0..c {
        for (o, d) in out[ch * hw..(ch + 1) * hw].iter_mut().zip(&denom) {
            *o *= beta / d;
        }
    }
    out
}

/// Backward of [`scaled_softmax_raw`] given its output `y`.
pub(crate) fn scaled_softmax_backward(y: &[f64], grad: &[f64], c: usize, hw: usize, alpha: f64, beta: f64) -> Vec<f64> {
    // dx_d = alpha * y_d * (g_d - sum_c g_c y_c / beta)
    let mut dot = vec![0.0; hw];
    for ch in 0..c {
        let r = ch * hw..(ch + 1) * hw;
        for ((d, &g), &yv) in dot.iter_mut().zip(&grad[r.clone()]).zip(&y[r]) {
            *d += g * yv;
        }
    }
    let mut out = vec![0.0; y.len()];
    for ch in 0..c {
        let r = ch * hw..(ch + 1) * hw;
        for (i, o) in out[r.clone()].iter_mut().enumerate() {
            let k = r.start + i;
            *o = alpha * y[k] * (grad[k] - dot[i] / beta);
        }
    }
    out
}

/// Non-overlapping `k x k` average pooling; spatial extents must divide by `k`.
pub fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::Shape(format!("{h}x{w} map is not divisible by pool size {k}")));
    }
    let (oh, ow) = (h / k, w / k);
    let mut out = vec![0.0; c * oh * ow];
    let inv = 1.0 / (k * k) as f64;
    let src = x.data();
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ch * oh + y / k) * ow + xx / k] += src[(ch * h + y) * w + xx] * inv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

pub(crate) fn avg_pool_backward(grad: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ch * h + y) * w + xx] = grad[(ch * oh + y / k) * ow + xx / k] * inv;
            }
        }
    }
    out
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
