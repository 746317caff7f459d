//! 2-D cross-correlation via im2col + GEMM.

use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{matmul, matmul_at, matmul_bt_acc, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Option<Tensor<T>>,
}

struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, spec: Conv2dSpec) -> Result<Self> {
        let (batch, c_in, h, w) = x.dims4()?;
        let (c_out, wc_in, kh, kw) = weight.dims4()?;
        if spec.stride == 0 {
            return Err(Error::shape("conv2d stride must be >= 1"));
        }
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv2d input has {c_in} channels, kernel expects {wc_in}"
            )));
        }
        let (hp, wp) = (h + 2 * spec.pad, w + 2 * spec.pad);
        if kh > hp || kw > wp {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}"
            )));
        }
        Ok(Self {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            ho: (hp - kh) / spec.stride + 1,
            wo: (wp - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.pad,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let p = self.positions();
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oi in 0..self.ho {
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        let out_row = &mut dst[oi * self.wo..(oi + 1) * self.wo];
                        if ii < 0 || ii >= self.h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[ii as usize * self.w..(ii as usize + 1) * self.w];
                        for (oj, o) in out_row.iter_mut().enumerate() {
                            let jj = (oj * self.stride + kj) as isize - self.pad as isize;
                            *o = if jj < 0 || jj >= self.w as isize {
                                T::zero()
                            } else {
                                src[jj as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_acc<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let p = self.positions();
        for c in 0..self.c_in {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &col[row * p..(row + 1) * p];
                    for oi in 0..self.ho {
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[ii as usize * self.w..(ii as usize + 1) * self.w];
                        for oj in 0..self.wo {
                            let jj = (oj * self.stride + kj) as isize - self.pad as isize;
                            if jj >= 0 && jj < self.w as isize {
                                dst[jj as usize] += src[oi * self.wo + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, c_out: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [c_out] => Err(Error::shape(format!(
            "conv2d bias {:?} for {c_out} output channels",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

/// `x: [B, C_in, H, W]`, `weight: [C_out, C_in, kH, kW]`, `bias: [C_out]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x, weight, spec)?;
    check_bias(bias, g.c_out)?;
    let (p, k) = (g.positions(), g.patch());
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * p;
    let mut out = vec![T::zero(); g.batch * out_stride];
    out.par_chunks_mut(out_stride)
        .zip(x.data().par_chunks(in_stride))
        .for_each_init(
            || vec![T::zero(); if g.is_pointwise() { 0 } else { k * p }],
            |col, (y, xb)| {
                let src: &[T] = if g.is_pointwise() {
                    xb
                } else {
                    g.im2col(xb, col);
                    col
                };
                matmul(weight.data(), src, y, g.c_out, k, p);
                if let Some(b) = bias {
                    for (co, row) in y.chunks_mut(p).enumerate() {
                        let bv = b.data()[co];
                        row.iter_mut().for_each(|v| *v += bv);
                    }
                }
            },
        );
    Tensor::from_vec(&[g.batch, g.c_out, g.ho, g.wo], out)
}

/// Gradients of [`conv2d`] given the upstream gradient `dy`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    with_bias: bool,
    spec: Conv2dSpec,
    dy: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let g = Geometry::new(x, weight, spec)?;
    if dy.shape() != [g.batch, g.c_out, g.ho, g.wo] {
        return Err(Error::shape(format!(
            "conv2d upstream gradient {:?}, expected {:?}",
            dy.shape(),
            [g.batch, g.c_out, g.ho, g.wo]
        )));
    }
    let (p, k) = (g.positions(), g.patch());
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * p;
    let mut dx = vec![T::zero(); x.len()];
    let partial_dw: Vec<Vec<T>> = dx
        .par_chunks_mut(in_stride)
        .zip(x.data().par_chunks(in_stride))
        .zip(dy.data().par_chunks(out_stride))
        .map(|((dxb, xb), dyb)| {
            let mut dw = vec![T::zero(); g.c_out * k];
            if g.is_pointwise() {
                matmul_bt_acc(dyb, xb, &mut dw, g.c_out, p, k);
                matmul_at(weight.data(), dyb, dxb, k, g.c_out, p);
            } else {
                let mut col = vec![T::zero(); k * p];
                g.im2col(xb, &mut col);
                matmul_bt_acc(dyb, &col, &mut dw, g.c_out, p, k);
                matmul_at(weight.data(), dyb, &mut col, k, g.c_out, p);
                g.col2im_acc(&col, dxb);
            }
            dw
        })
        .collect();

    let mut dw = vec![T::zero(); g.c_out * k];
    for part in &partial_dw {
        for (a, &b) in dw.iter_mut().zip(part) {
            *a += b;
        }
    }
    let db = with_bias.then(|| {
        let mut db = vec![T::zero(); g.c_out];
        for dyb in dy.data().chunks(out_stride) {
            for (co, row) in dyb.chunks(p).enumerate() {
                db[co] += row.iter().copied().sum::<T>();
            }
        }
        Tensor::from_vec(&[g.c_out], db).expect("bias shape")
    });
    Ok(Conv2dGrads {
        dx: Tensor::from_vec(x.shape(), dx)?,
        dw: Tensor::from_vec(weight.shape(), dw)?,
        db,
    })
}
