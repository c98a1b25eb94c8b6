//! Raw numeric kernels behind the graph ops. All loops run in a fixed order so
//! results are bit-reproducible.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Spatial geometry shared by a convolution and its adjoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(&self, input: usize, kernel: usize) -> usize {
        (input + 2 * self.pad - kernel) / self.stride + 1
    }

    /// Output length of the transposed convolution (no output padding).
    pub fn transposed_len(&self, input: usize, kernel: usize) -> usize {
        (input - 1) * self.stride + kernel - 2 * self.pad
    }
}

/// `c[m,n] += a[m,k] * b[k,n]` on raw slices.
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`.
fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c[i * n + j] += s;
        }
    }
}

/// `c[m,n] += a[k,m]^T * b[k,n]`.
fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::shape("matmul", sa, sb));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![0.0; m * n];
    gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let s = a.shape();
    if s.len() != 2 {
        return Err(Error::shape("transpose", s, &[]));
    }
    let (m, n) = (s[0], s[1]);
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
}

fn dims4(op: &'static str, t: &Tensor) -> Result<Dims> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::shape(op, s, &[0, 0, 0, 0]));
    }
    Ok(Dims {
        n: s[0],
        c: s[1],
        h: s[2],
        w: s[3],
    })
}

/// Unfolds one image `[c, h, w]` into columns `[c*kh*kw, oh*ow]`.
#[allow(clippy::too_many_arguments)]
fn im2col(
    img: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let plane = oh * ow;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        dst[oy * ow + ox] = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            img[(ci * h + iy as usize) * w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into an image, accumulating.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
    img: &mut [f64],
) {
    let plane = oh * ow;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            img[(ci * h + iy as usize) * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `x [n,c,h,w]`, `w [o,c,kh,kw]` -> `[n,o,oh,ow]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, g: ConvGeom) -> Result<Tensor> {
    let xd = dims4("conv2d", x)?;
    let wd = dims4("conv2d", weight)?;
    if wd.c != xd.c || xd.h + 2 * g.pad < wd.h || xd.w + 2 * g.pad < wd.w {
        return Err(Error::shape("conv2d", x.shape(), weight.shape()));
    }
    let (oh, ow) = (g.out_len(xd.h, wd.h), g.out_len(xd.w, wd.w));
    let krows = xd.c * wd.h * wd.w;
    let plane = oh * ow;
    let mut cols = vec![0.0; krows * plane];
    let mut out = vec![0.0; xd.n * wd.n * plane];
    let img_len = xd.c * xd.h * xd.w;
    for b in 0..xd.n {
        im2col(&x.data()[b * img_len..(b + 1) * img_len], xd.c, xd.h, xd.w, wd.h, wd.w, g, oh, ow, &mut cols);
        let dst = &mut out[b * wd.n * plane..(b + 1) * wd.n * plane];
        gemm_acc(weight.data(), &cols, dst, wd.n, krows, plane);
    }
    Tensor::new(vec![xd.n, wd.n, oh, ow], out)
}

/// Gradient of `conv2d` with respect to its input; equivalently the transposed
/// convolution of `gy [n,o,oh,ow]` with `w [o,c,kh,kw]`, producing `[n,c,h,w]`.
pub fn conv2d_grad_input(gy: &Tensor, weight: &Tensor, out_hw: (usize, usize), g: ConvGeom) -> Result<Tensor> {
    let gd = dims4("conv_transpose2d", gy)?;
    let wd = dims4("conv_transpose2d", weight)?;
    let (h, w) = out_hw;
    if gd.c != wd.n || g.out_len(h, wd.h) != gd.h || g.out_len(w, wd.w) != gd.w {
        return Err(Error::shape("conv_transpose2d", gy.shape(), weight.shape()));
    }
    let krows = wd.c * wd.h * wd.w;
    let plane = gd.h * gd.w;
    let mut cols = vec![0.0; krows * plane];
    let img_len = wd.c * h * w;
    let mut out = vec![0.0; gd.n * img_len];
    for b in 0..gd.n {
        cols.iter_mut().for_each(|v| *v = 0.0);
        let src = &gy.data()[b * gd.c * plane..(b + 1) * gd.c * plane];
        gemm_tn_acc(weight.data(), src, &mut cols, krows, gd.c, plane);
        col2im(&cols, wd.c, h, w, wd.h, wd.w, g, gd.h, gd.w, &mut out[b * img_len..(b + 1) * img_len]);
    }
    Tensor::new(vec![gd.n, wd.c, h, w], out)
}

/// Gradient of `conv2d` with respect to its weight: `[o,c,kh,kw]`.
pub fn conv2d_grad_weight(x: &Tensor, gy: &Tensor, kernel: (usize, usize), g: ConvGeom) -> Result<Tensor> {
    let xd = dims4("conv2d_weight_grad", x)?;
    let gd = dims4("conv2d_weight_grad", gy)?;
    let (kh, kw) = kernel;
    if xd.n != gd.n || xd.h + 2 * g.pad < kh || g.out_len(xd.h, kh) != gd.h || g.out_len(xd.w, kw) != gd.w {
        return Err(Error::shape("conv2d_weight_grad", x.shape(), gy.shape()));
    }
    let krows = xd.c * kh * kw;
    let plane = gd.h * gd.w;
    let mut cols = vec![0.0; krows * plane];
    let mut out = vec![0.0; gd.c * krows];
    let img_len = xd.c * xd.h * xd.w;
    for b in 0..xd.n {
        im2col(&x.data()[b * img_len..(b + 1) * img_len], xd.c, xd.h, xd.w, kh, kw, g, gd.h, gd.w, &mut cols);
        let src = &gy.data()[b * gd.c * plane..(b + 1) * gd.c * plane];
        gemm_nt_acc(src, &cols, &mut out, gd.c, plane, krows);
    }
    Tensor::new(vec![gd.c, xd.c, kh, kw], out)
}
