//! Tape-free compute kernels.
//!
//! Every differentiable op on the [`Tape`](super::Tape) delegates its forward
//! (and where useful its backward) arithmetic to these functions. Forward-only
//! consumers such as the perturbation baselines call them directly so that no
//! tape is ever created.

use crate::error::{dim_err, Result};

/// Geometry of a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return Err(dim_err(format!(
                "conv2d expects [N,C,H,W] and [F,C,kh,kw], got {x_shape:?} and {w_shape:?}"
            )));
        }
        if x_shape[1] != w_shape[1] {
            return Err(dim_err(format!(
                "conv2d channel mismatch: input has {}, kernel expects {}",
                x_shape[1], w_shape[1]
            )));
        }
        if stride == 0 {
            return Err(dim_err("conv2d stride must be positive"));
        }
        let g = Self {
            batch: x_shape[0],
            in_channels: x_shape[1],
            height: x_shape[2],
            width: x_shape[3],
            filters: w_shape[0],
            kernel_h: w_shape[2],
            kernel_w: w_shape[3],
            stride,
            padding,
        };
        if g.kernel_h > g.height + 2 * padding || g.kernel_w > g.width + 2 * padding {
            return Err(dim_err(format!(
                "kernel {}x{} larger than padded input {}x{}",
                g.kernel_h,
                g.kernel_w,
                g.height + 2 * padding,
                g.width + 2 * padding
            )));
        }
        Ok(g)
    }

    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.filters, self.out_h(), self.out_w()]
    }

    /// Output positions `o` along one axis for which `o*stride + k - pad` lands
    /// inside `[0, size)`.
    fn valid_range(&self, k: usize, size: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let offset = k as isize - self.padding as isize;
        // smallest o with o*s + offset >= 0
        let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
        // largest o with o*s + offset <= size-1
        let hi_incl = (size as isize - 1 - offset).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, out as isize);
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }
}

pub fn conv2d_forward(x: &[f32], w: &[f32], b: Option<&[f32]>, g: &ConvGeometry) -> Vec<f32> {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let plane_in = g.height * g.width;
    let plane_out = oh_n * ow_n;
    let mut out = vec![0.0f32; g.batch * g.filters * plane_out];
    for n in 0..g.batch {
        for f in 0..g.filters {
            let o_base = (n * g.filters + f) * plane_out;
            let mut o_plane = vec![b.map_or(0.0, |b| b[f] as f64); plane_out];
            for c in 0..g.in_channels {
                let x_plane = &x[(n * g.in_channels + c) * plane_in..][..plane_in];
                for ki in 0..g.kernel_h {
                    let (oh_lo, oh_hi) = g.valid_range(ki, g.height, oh_n);
                    for kj in 0..g.kernel_w {
                        let wv = w[((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj] as f64;
                        let (ow_lo, ow_hi) = g.valid_range(kj, g.width, ow_n);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + ki - g.padding;
                            let o_row = &mut o_plane[oh * ow_n..(oh + 1) * ow_n];
                            let x_row = &x_plane[ih * g.width..(ih + 1) * g.width];
                            if g.stride == 1 {
                                let iw0 = ow_lo + kj - g.padding;
                                let len = ow_hi - ow_lo;
                                for (o, xi) in o_row[ow_lo..ow_hi].iter_mut().zip(&x_row[iw0..iw0 + len]) {
                                    *o += wv * *xi as f64;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    o_row[ow] += wv * x_row[ow * g.stride + kj - g.padding] as f64;
                                }
                            }
                        }
                    }
                }
            }
            for (d, v) in out[o_base..o_base + plane_out].iter_mut().zip(o_plane) {
                *d = v as f32;
            }
        }
    }
    out
}

/// Gradients of a cross-correlation with respect to input, kernel and bias.
pub struct ConvGrads {
    pub x: Option<Vec<f32>>,
    pub w: Option<Vec<f32>>,
    pub b: Option<Vec<f32>>,
}

pub fn conv2d_backward(
    x: &[f32],
    w: &[f32],
    gout: &[f32],
    g: &ConvGeometry,
    need: (bool, bool, bool),
) -> ConvGrads {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let plane_in = g.height * g.width;
    let plane_out = oh_n * ow_n;
    let mut gx = need.0.then(|| vec![0.0f64; x.len()]);
    let mut gw = need.1.then(|| vec![0.0f64; w.len()]);
    let gb = need.2.then(|| {
        let mut acc = vec![0.0f64; g.filters];
        for n in 0..g.batch {
            for (f, a) in acc.iter_mut().enumerate() {
                let base = (n * g.filters + f) * plane_out;
                *a += gout[base..base + plane_out].iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        acc.into_iter().map(|v| v as f32).collect()
    });
    if gx.is_none() && gw.is_none() {
        return ConvGrads { x: None, w: None, b: gb };
    }
    for n in 0..g.batch {
        for f in 0..g.filters {
            let go_plane = &gout[(n * g.filters + f) * plane_out..][..plane_out];
            for c in 0..g.in_channels {
                let xi_base = (n * g.in_channels + c) * plane_in;
                for ki in 0..g.kernel_h {
                    let (oh_lo, oh_hi) = g.valid_range(ki, g.height, oh_n);
                    for kj in 0..g.kernel_w {
                        let widx = ((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj;
                        let wv = w[widx] as f64;
                        let (ow_lo, ow_hi) = g.valid_range(kj, g.width, ow_n);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let mut wacc = 0.0f64;
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + ki - g.padding;
                            let go_row = &go_plane[oh * ow_n..(oh + 1) * ow_n];
                            let row_base = xi_base + ih * g.width;
                            if g.stride == 1 {
                                let iw0 = ow_lo + kj - g.padding;
                                let len = ow_hi - ow_lo;
                                let go = &go_row[ow_lo..ow_hi];
                                if gw.is_some() {
                                    let xs = &x[row_base + iw0..row_base + iw0 + len];
                                    wacc += go.iter().zip(xs).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>();
                                }
                                if let Some(gx) = gx.as_mut() {
                                    for (d, gv) in gx[row_base + iw0..row_base + iw0 + len].iter_mut().zip(go) {
                                        *d += wv * *gv as f64;
                                    }
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let xi = row_base + ow * g.stride + kj - g.padding;
                                    let gv = go_row[ow] as f64;
                                    wacc += gv * x[xi] as f64;
                                    if let Some(gx) = gx.as_mut() {
                                        gx[xi] += wv * gv;
                                    }
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += wacc;
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        x: gx.map(|v| v.into_iter().map(|a| a as f32).collect()),
        w: gw.map(|v| v.into_iter().map(|a| a as f32).collect()),
        b: gb,
    }
}

/// `y[n,m] = sum_d x[n,d] * w[m,d] + b[m]`.
pub fn linear_forward(x: &[f32], w: &[f32], b: Option<&[f32]>, n: usize, d: usize, m: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * m];
    for i in 0..n {
        let xr = &x[i * d..(i + 1) * d];
        for j in 0..m {
            let wr = &w[j * d..(j + 1) * d];
            let dot: f64 = xr.iter().zip(wr).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            out[i * m + j] = dot as f32 + b.map_or(0.0, |b| b[j]);
        }
    }
    out
}

pub fn linear_backward(
    x: &[f32],
    w: &[f32],
    gy: &[f32],
    (n, d, m): (usize, usize, usize),
    need: (bool, bool, bool),
) -> (Option<Vec<f32>>, Option<Vec<f32>>, Option<Vec<f32>>) {
    let gx = need.0.then(|| {
        let mut gx = vec![0.0f64; n * d];
        for i in 0..n {
            let row = &mut gx[i * d..(i + 1) * d];
            for j in 0..m {
                let gv = gy[i * m + j] as f64;
                if gv == 0.0 {
                    continue;
                }
                for (r, wv) in row.iter_mut().zip(&w[j * d..(j + 1) * d]) {
                    *r += gv * *wv as f64;
                }
            }
        }
        gx.into_iter().map(|v| v as f32).collect()
    });
    let gw = need.1.then(|| {
        let mut gw = vec![0.0f64; m * d];
        for i in 0..n {
            let xr = &x[i * d..(i + 1) * d];
            for j in 0..m {
                let gv = gy[i * m + j] as f64;
                for (r, xv) in gw[j * d..(j + 1) * d].iter_mut().zip(xr) {
                    *r += gv * *xv as f64;
                }
            }
        }
        gw.into_iter().map(|v| v as f32).collect()
    });
    let gb = need.2.then(|| {
        (0..m)
            .map(|j| (0..n).map(|i| gy[i * m + j] as f64).sum::<f64>() as f32)
            .collect()
    });
    (gx, gw, gb)
}

/// Softmax over contiguous rows of length `width`.
pub fn softmax_rows(x: &[f32], width: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for (src, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0.0f64;
        for (d, s) in dst.iter_mut().zip(src) {
            let e = ((s - max) as f64).exp();
            *d = e as f32;
            total += e;
        }
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (((s - max) as f64).exp() / total) as f32;
        }
    }
    out
}

pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn relu(v: f32) -> f32 {
    v.max(0.0)
}

/// Checks that two shapes agree exactly.
pub(crate) fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(dim_err(format!("{op}: shape mismatch {a:?} vs {b:?}")));
    }
    Ok(())
}
