//! Convolution kernels on plain tensors (im2col + GEMM).

use crate::element::{matmul, MatRef};
use crate::{Element, Tensor};

/// Symmetric zero padding and stride of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub pad: usize,
    pub stride: usize,
}

impl Conv2dGeometry {
    pub fn new(pad: usize, stride: usize) -> Self {
        assert!(stride >= 1, "stride must be positive");
        Self { pad, stride }
    }

    pub fn output_len(&self, input: usize, kernel: usize) -> usize {
        let padded = input + 2 * self.pad;
        assert!(
            padded >= kernel,
            "input extent {input} (pad {}) smaller than kernel {kernel}",
            self.pad
        );
        (padded - kernel) / self.stride + 1
    }
}

struct Dims {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad: usize,
    stride: usize,
}

fn im2col<E: Element>(src: &[E], d: &Dims, cols: &mut [E]) {
    let spatial = d.oh * d.ow;
    let mut row = 0;
    for ch in 0..d.c {
        let plane = &src[ch * d.h * d.w..(ch + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    let line = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        line.iter_mut().for_each(|v| *v = E::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            E::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<E: Element>(cols: &[E], d: &Dims, dst: &mut [E]) {
    let spatial = d.oh * d.ow;
    let mut row = 0;
    for ch in 0..d.c {
        let plane = &mut dst[ch * d.h * d.w..(ch + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let src = &cols[row * spatial..(row + 1) * spatial];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst_row[ix as usize] += src[oy * d.ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn dims_for(c: usize, h: usize, w: usize, kh: usize, kw: usize, g: Conv2dGeometry) -> Dims {
    Dims {
        c,
        h,
        w,
        kh,
        kw,
        oh: g.output_len(h, kh),
        ow: g.output_len(w, kw),
        pad: g.pad,
        stride: g.stride,
    }
}

/// Cross-correlation of `x: [N, Ci, H, W]` with `weight: [Co, Ci, kh, kw]`.
pub fn conv2d<E: Element>(x: &Tensor<E>, weight: &Tensor<E>, geom: Conv2dGeometry) -> Tensor<E> {
    let (n, ci, h, w) = x.shape().nchw();
    let (co, wci, kh, kw) = weight.shape().nchw();
    assert_eq!(ci, wci, "conv2d: input has {ci} channels, weight expects {wci}");
    let d = dims_for(ci, h, w, kh, kw, geom);
    let k = ci * kh * kw;
    let spatial = d.oh * d.ow;
    let mut cols = vec![E::zero(); k * spatial];
    let mut out = vec![E::zero(); n * co * spatial];
    for b in 0..n {
        im2col(&x.data()[b * ci * h * w..(b + 1) * ci * h * w], &d, &mut cols);
        matmul(
            MatRef::new(weight.data(), co, k),
            MatRef::new(&cols, k, spatial),
            &mut out[b * co * spatial..(b + 1) * co * spatial],
            false,
        );
    }
    Tensor::from_vec([n, co, d.oh, d.ow], out)
}

/// Adjoint of [`conv2d`] with respect to its input (a transposed convolution).
pub fn conv2d_input_grad<E: Element>(
    grad_out: &Tensor<E>,
    weight: &Tensor<E>,
    geom: Conv2dGeometry,
    input_hw: (usize, usize),
) -> Tensor<E> {
    let (n, co, goh, gow) = grad_out.shape().nchw();
    let (wco, ci, kh, kw) = weight.shape().nchw();
    assert_eq!(co, wco, "conv2d_input_grad: channel mismatch");
    let (h, w) = input_hw;
    let d = dims_for(ci, h, w, kh, kw, geom);
    assert_eq!((d.oh, d.ow), (goh, gow), "conv2d_input_grad: output extent mismatch");
    let k = ci * kh * kw;
    let spatial = d.oh * d.ow;
    let mut cols = vec![E::zero(); k * spatial];
    let mut out = vec![E::zero(); n * ci * h * w];
    for b in 0..n {
        matmul(
            MatRef::new(weight.data(), co, k).t(),
            MatRef::new(&grad_out.data()[b * co * spatial..(b + 1) * co * spatial], co, spatial),
            &mut cols,
            false,
        );
        col2im(&cols, &d, &mut out[b * ci * h * w..(b + 1) * ci * h * w]);
    }
    Tensor::from_vec([n, ci, h, w], out)
}

/// Adjoint of [`conv2d`] with respect to its weight.
pub fn conv2d_weight_grad<E: Element>(
    x: &Tensor<E>,
    grad_out: &Tensor<E>,
    geom: Conv2dGeometry,
    kernel_hw: (usize, usize),
) -> Tensor<E> {
    let (n, ci, h, w) = x.shape().nchw();
    let (gn, co, goh, gow) = grad_out.shape().nchw();
    assert_eq!(n, gn, "conv2d_weight_grad: batch mismatch");
    let (kh, kw) = kernel_hw;
    let d = dims_for(ci, h, w, kh, kw, geom);
    assert_eq!((d.oh, d.ow), (goh, gow), "conv2d_weight_grad: output extent mismatch");
    let k = ci * kh * kw;
    let spatial = d.oh * d.ow;
    let mut cols = vec![E::zero(); k * spatial];
    let mut out = vec![E::zero(); co * k];
    for b in 0..n {
        im2col(&x.data()[b * ci * h * w..(b + 1) * ci * h * w], &d, &mut cols);
        matmul(
            MatRef::new(&grad_out.data()[b * co * spatial..(b + 1) * co * spatial], co, spatial),
            MatRef::new(&cols, k, spatial).t(),
            &mut out,
            b > 0,
        );
    }
    Tensor::from_vec([co, ci, kh, kw], out)
}
