//! Activation, pooling, affine and loss primitives.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{matmul_at, matmul_bt_acc, Scalar};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] expressed through its output `y`.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    super::tensor::ensure_same_shape(y, dy, "relu backward")?;
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(y.shape(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2dSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Pool2dSpec {
    pub fn square(k: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel: (k, k),
            stride: (stride, stride),
            pad: (pad, pad),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaxPoolOutput<T> {
    pub y: Tensor<T>,
    /// Flat index into the input for every output element.
    pub argmax: Vec<usize>,
}

/// Window maximum over `x: [B, C, H, W]`; padding never wins.
///
/// Ties resolve to the first position in row-major window order.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, spec: Pool2dSpec) -> Result<MaxPoolOutput<T>> {
    let (b, c, h, w) = x.dims4()?;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.pad;
    if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
        return Err(Error::shape("maxpool kernel and stride must be >= 1"));
    }
    if kh > h + 2 * ph || kw > w + 2 * pw || ph >= kh || pw >= kw {
        return Err(Error::shape(format!(
            "maxpool kernel {kh}x{kw} (pad {ph},{pw}) does not fit {h}x{w}"
        )));
    }
    let ho = (h + 2 * ph - kh) / sh + 1;
    let wo = (w + 2 * pw - kw) / sw + 1;
    let xd = x.data();
    let mut y = Vec::with_capacity(b * c * ho * wo);
    let mut argmax = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oi in 0..ho {
            let i0 = (oi * sh) as isize - ph as isize;
            let (ilo, ihi) = (i0.max(0) as usize, ((i0 + kh as isize) as usize).min(h));
            for oj in 0..wo {
                let j0 = (oj * sw) as isize - pw as isize;
                let (jlo, jhi) = (j0.max(0) as usize, ((j0 + kw as isize) as usize).min(w));
                let mut best = base + ilo * w + jlo;
                for i in ilo..ihi {
                    for j in jlo..jhi {
                        let idx = base + i * w + j;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                y.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok(MaxPoolOutput {
        y: Tensor::from_vec(&[b, c, ho, wo], y)?,
        argmax,
    })
}

/// Routes each upstream gradient entry to its recorded argmax.
pub fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != dy.len() {
        return Err(Error::shape(format!(
            "maxpool backward: {} indices for {} gradients",
            argmax.len(),
            dy.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let n = dx.len();
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        if idx >= n {
            return Err(Error::shape("maxpool argmax index out of range"));
        }
        d[idx] += g;
    }
    Ok(dx)
}

/// `y = x W^T + b` with `x: [B, D_in]`, `W: [D_out, D_in]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, d_in) = x.dims2()?;
    let (d_out, w_in) = weight.dims2()?;
    if w_in != d_in || bias.shape() != [d_out] {
        return Err(Error::shape(format!(
            "linear: x {:?}, W {:?}, b {:?}",
            x.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut y = Vec::with_capacity(b * d_out);
    for _ in 0..b {
        y.extend_from_slice(bias.data());
    }
    matmul_bt_acc(x.data(), weight.data(), &mut y, b, d_in, d_out);
    Tensor::from_vec(&[b, d_out], y)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (b, d_in) = x.dims2()?;
    let (d_out, _) = weight.dims2()?;
    if dy.shape() != [b, d_out] {
        return Err(Error::shape(format!(
            "linear backward: dy {:?}, expected [{b}, {d_out}]",
            dy.shape()
        )));
    }
    let mut dx = vec![T::zero(); b * d_in];
    crate::scalar::matmul(dy.data(), weight.data(), &mut dx, b, d_out, d_in);
    let mut dw = vec![T::zero(); d_out * d_in];
    matmul_at(dy.data(), x.data(), &mut dw, d_out, b, d_in);
    let mut db = vec![T::zero(); d_out];
    for row in dy.data().chunks(d_out) {
        for (a, &g) in db.iter_mut().zip(row) {
            *a += g;
        }
    }
    Ok(LinearGrads {
        dx: Tensor::from_vec(&[b, d_in], dx)?,
        dw: Tensor::from_vec(&[d_out, d_in], dw)?,
        db: Tensor::from_vec(&[d_out], db)?,
    })
}

/// Mean cross-entropy of `softmax(logits)` against `labels`, with the
/// gradient `(softmax - onehot) / B`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let (b, n) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::shape(format!(
            "{} labels for batch of {b}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: n,
        });
    }
    let inv_b = T::one() / T::from_usize_lossy(b);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); b * n];
    for ((row, g), &label) in logits.data().chunks(n).zip(grad.chunks_mut(n)).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - max).exp();
            denom += *gi;
        }
        loss += denom.ln() - (row[label] - max);
        for gi in g.iter_mut() {
            *gi = *gi / denom * inv_b;
        }
        g[label] -= inv_b;
    }
    let loss = loss * inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss, Tensor::from_vec(&[b, n], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::<f32>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_two_by_two() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = maxpool2d(&x, Pool2dSpec::square(2, 2, 0)).unwrap();
        assert_eq!(out.y.data(), &[4.0]);
        assert_eq!(out.argmax, vec![3]);
    }

    #[test]
    fn maxpool_padding_never_selected() {
        let x = Tensor::<f32>::filled(&[1, 1, 3, 3], -5.0);
        let out = maxpool2d(&x, Pool2dSpec::square(3, 2, 1)).unwrap();
        assert_eq!(out.y.shape(), &[1, 1, 2, 2]);
        assert!(out.y.data().iter().all(|&v| v == -5.0));
    }

    #[test]
    fn maxpool_backward_conserves_gradient() {
        let x = Tensor::<f64>::from_vec(
            &[1, 1, 4, 4],
            (0..16).map(|i| ((i * 7) % 11) as f64).collect(),
        )
        .unwrap();
        let out = maxpool2d(&x, Pool2dSpec::square(3, 1, 1)).unwrap();
        let dy = Tensor::from_vec(out.y.shape(), (0..out.y.len()).map(|i| i as f64 + 0.5).collect())
            .unwrap();
        let dx = maxpool2d_backward(x.shape(), &out.argmax, &dy).unwrap();
        let total_in: f64 = dy.data().iter().sum();
        let total_out: f64 = dx.data().iter().sum();
        assert!((total_in - total_out).abs() < 1e-12);
        for (i, &g) in dx.data().iter().enumerate() {
            if g != 0.0 {
                assert!(out.argmax.contains(&i));
            }
        }
    }

    #[test]
    fn linear_identity() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let y = linear(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_n() {
        let logits = Tensor::<f64>::zeros(&[3, 7]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 3, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        for row in grad.data().chunks(7) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_is_stable_for_huge_logits() {
        let logits = Tensor::<f32>::from_vec(&[1, 3], vec![1000.0, 0.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-6);
        assert!(grad.data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::<f32>::zeros(&[1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, n_classes: 3 })
        ));
    }
}
