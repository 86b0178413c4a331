//! 2-D cross-correlation via im2col + GEMM.

use super::gemm::matmul_into;
use super::Tensor;
use crate::error::{dim_err, Result};

/// Output extent of a convolution along one axis, or `None` when the
/// kernel does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn of(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (&[n, c, h, wi], &[co, ci, k, k2]) = (x.shape(), w.shape()) else {
            return dim_err(format!(
                "conv2d expects x[N,C,H,W] and w[Co,Ci,k,k], got {:?} and {:?}",
                x.shape(),
                w.shape()
            ));
        };
        if ci != c {
            return dim_err(format!("conv2d: input has {c} channels, weight expects {ci}"));
        }
        if k != k2 {
            return dim_err(format!("conv2d: non-square kernel {k}x{k2}"));
        }
        let (Some(ho), Some(wo)) = (
            conv_output_extent(h, k, stride, pad),
            conv_output_extent(wi, k, stride, pad),
        ) else {
            return dim_err(format!(
                "conv2d: kernel {k} stride {stride} pad {pad} does not fit {h}x{wi}"
            ));
        };
        Ok(Self {
            n,
            c,
            h,
            w: wi,
            co,
            k,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Output columns `lo..hi` along one axis whose input tap `o·stride + kk − pad`
/// lands inside `0..n`.
fn valid_range(g: &Geometry, kk: usize, n: usize, out: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kk).div_ceil(g.stride);
    let hi = if n + g.pad > kk {
        ((n + g.pad - kk - 1) / g.stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col(g: &Geometry, x: &[f64], cols: &mut [f64]) {
    let ol = g.out_len();
    for c in 0..g.c {
        for ki in 0..g.k {
            let (oh_lo, oh_hi) = valid_range(g, ki, g.h, g.ho);
            for kj in 0..g.k {
                let (lo, hi) = valid_range(g, kj, g.w, g.wo);
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ol..(row + 1) * ol];
                dst[..oh_lo * g.wo].fill(0.0);
                dst[oh_hi * g.wo..].fill(0.0);
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.stride + ki - g.pad;
                    let src = &x[(c * g.h + ih) * g.w..][..g.w];
                    let line = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    // first valid input column
                    let iw0 = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[iw0..iw0 + hi - lo]);
                    } else {
                        for (v, &s) in line[lo..hi].iter_mut().zip(src[iw0..].iter().step_by(g.stride)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &Geometry, cols: &[f64], dx: &mut [f64]) {
    let ol = g.out_len();
    for c in 0..g.c {
        for ki in 0..g.k {
            let (oh_lo, oh_hi) = valid_range(g, ki, g.h, g.ho);
            for kj in 0..g.k {
                let (lo, hi) = valid_range(g, kj, g.w, g.wo);
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ol..(row + 1) * ol];
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.stride + ki - g.pad;
                    let dst = &mut dx[(c * g.h + ih) * g.w..][..g.w];
                    let line = &src[oh * g.wo + lo..oh * g.wo + hi];
                    let iw0 = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        dst[iw0..iw0 + line.len()].iter_mut().zip(line).for_each(|(d, s)| *d += s);
                    } else {
                        for (d, s) in dst[iw0..].iter_mut().step_by(g.stride).zip(line) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlate `x[N,C,H,W]` with `w[Co,C,k,k]` (no bias).
pub fn conv2d_forward(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = Geometry::of(x, w, stride, pad)?;
    let (pl, ol) = (g.patch_len(), g.out_len());
    let mut out = vec![0.0; g.n * g.co * ol];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; pl * ol] };
    for n in 0..g.n {
        let xn = &x.data()[n * g.in_len()..(n + 1) * g.in_len()];
        let rhs: &[f64] = if g.is_pointwise() {
            xn
        } else {
            im2col(&g, xn, &mut cols);
            &cols
        };
        let yn = &mut out[n * g.co * ol..(n + 1) * g.co * ol];
        matmul_into(g.co, pl, ol, w.data(), (pl, 1), rhs, (ol, 1), yn, false);
    }
    Tensor::new(&[g.n, g.co, g.ho, g.wo], out)
}

/// Gradients of [`conv2d_forward`] with respect to its input and weight.
///
/// Weight gradients are summed over the batch in sample order.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &[f64],
    stride: usize,
    pad: usize,
    want_dx: bool,
    want_dw: bool,
) -> Result<(Option<Vec<f64>>, Option<Vec<f64>>)> {
    let g = Geometry::of(x, w, stride, pad)?;
    let (pl, ol) = (g.patch_len(), g.out_len());
    if dy.len() != g.n * g.co * ol {
        return dim_err("conv2d backward: upstream gradient has wrong size");
    }
    let mut dx = want_dx.then(|| vec![0.0; x.numel()]);
    let mut dw = want_dw.then(|| vec![0.0; w.numel()]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; pl * ol] };
    let mut dcols = if want_dx && !g.is_pointwise() {
        vec![0.0; pl * ol]
    } else {
        Vec::new()
    };
    for n in 0..g.n {
        let xn = &x.data()[n * g.in_len()..(n + 1) * g.in_len()];
        let dyn_ = &dy[n * g.co * ol..(n + 1) * g.co * ol];
        if let Some(dw) = dw.as_mut() {
            let cols_ref: &[f64] = if g.is_pointwise() {
                xn
            } else {
                im2col(&g, xn, &mut cols);
                &cols
            };
            // dW[Co, pl] += dy_n[Co, ol] · cols_nᵀ[ol, pl]
            matmul_into(g.co, ol, pl, dyn_, (ol, 1), cols_ref, (1, ol), dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * g.in_len()..(n + 1) * g.in_len()];
            if g.is_pointwise() {
                // dx_n[C, HW] = Wᵀ[C, Co] · dy_n[Co, HW]
                matmul_into(pl, g.co, ol, w.data(), (1, pl), dyn_, (ol, 1), dxn, false);
            } else {
                matmul_into(pl, g.co, ol, w.data(), (1, pl), dyn_, (ol, 1), &mut dcols, false);
                col2im_add(&g, &dcols, dxn);
            }
        }
    }
    Ok((dx, dw))
}
