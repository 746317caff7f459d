use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Saved activations for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormOutput<T> {
    pub y: Tensor<T>,
    pub cache: BatchNormCache<T>,
    /// Updated `(running_mean, running_var)`; `None` in eval mode.
    pub running: Option<(Tensor<T>, Tensor<T>)>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

fn check(c: usize, tensors: &[(&str, &[usize])]) -> Result<()> {
    for (name, shape) in tensors {
        if *shape != [c] {
            return Err(Error::shape(format!(
                "batchnorm {name} {shape:?} for {c} channels"
            )));
        }
    }
    Ok(())
}

/// Per-channel batch normalisation of `x: [B, C, H, W]`.
///
/// Train mode normalises with batch statistics (biased variance) and returns
/// running statistics updated with momentum 0.1 (unbiased variance); eval mode
/// normalises with the supplied running statistics.
pub fn batchnorm2d<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
) -> Result<BatchNormOutput<T>> {
    let (b, c, h, w) = x.dims4()?;
    check(
        c,
        &[
            ("gamma", gamma.shape()),
            ("beta", beta.shape()),
            ("running_mean", running_mean.shape()),
            ("running_var", running_var.shape()),
        ],
    )?;
    let plane = h * w;
    let count = b * plane;
    let eps = T::lit(BN_EPS);
    let xd = x.data();

    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for n in 0..b {
                    let base = (n * c + ch) * plane;
                    s += xd[base..base + plane].iter().copied().sum::<T>();
                }
                let m = s / T::from_usize_lossy(count);
                let mut sq = T::zero();
                for n in 0..b {
                    let base = (n * c + ch) * plane;
                    sq += xd[base..base + plane].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                }
                mean[ch] = m;
                var[ch] = sq / T::from_usize_lossy(count);
            }
            (mean, var)
        }
        Mode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            let (m, s, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + plane {
                let xh = (xd[i] - m) * s;
                xhat[i] = xh;
                y[i] = xh * g + bt;
            }
        }
    }

    let running = (mode == Mode::Train).then(|| {
        let mom = T::lit(BN_MOMENTUM);
        let unbias = if count > 1 {
            T::from_usize_lossy(count) / T::from_usize_lossy(count - 1)
        } else {
            T::one()
        };
        let rm: Vec<T> = running_mean
            .data()
            .iter()
            .zip(&mean)
            .map(|(&r, &m)| (T::one() - mom) * r + mom * m)
            .collect();
        let rv: Vec<T> = running_var
            .data()
            .iter()
            .zip(&var)
            .map(|(&r, &v)| (T::one() - mom) * r + mom * v * unbias)
            .collect();
        (
            Tensor::from_vec(&[c], rm).expect("channel vector"),
            Tensor::from_vec(&[c], rv).expect("channel vector"),
        )
    });

    Ok(BatchNormOutput {
        y: Tensor::from_vec(x.shape(), y)?,
        cache: BatchNormCache {
            xhat: Tensor::from_vec(x.shape(), xhat)?,
            inv_std,
        },
        running,
    })
}

pub fn batchnorm2d_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    mode: Mode,
    dy: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let (b, c, h, w) = cache.xhat.dims4()?;
    if dy.shape() != cache.xhat.shape() {
        return Err(Error::shape(format!(
            "batchnorm upstream gradient {:?}, expected {:?}",
            dy.shape(),
            cache.xhat.shape()
        )));
    }
    let plane = h * w;
    let count = T::from_usize_lossy(b * plane);
    let (xh, g) = (cache.xhat.data(), dy.data());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            for i in base..base + plane {
                dgamma[ch] += g[i] * xh[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            for i in base..base + plane {
                dx[i] = match mode {
                    // dxhat = dy * gamma; dx = inv_std/M * (M dxhat - sum dxhat - xhat sum(dxhat xhat))
                    Mode::Train => {
                        scale * (g[i] - dbeta[ch] / count - xh[i] * dgamma[ch] / count)
                    }
                    Mode::Eval => scale * g[i],
                };
            }
        }
    }
    Ok(BatchNormGrads {
        dx: Tensor::from_vec(dy.shape(), dx)?,
        dgamma: Tensor::from_vec(&[c], dgamma)?,
        dbeta: Tensor::from_vec(&[c], dbeta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn channel_stats(y: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (b, c, h, w) = y.dims4().unwrap();
        let plane = h * w;
        let vals: Vec<f64> = (0..b)
            .flat_map(|n| y.data()[(n * c + ch) * plane..(n * c + ch + 1) * plane].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    fn random_input(seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [4, 3, 5, 6];
        let n = shape.iter().product();
        Tensor::from_vec(&shape, (0..n).map(|_| rng.gen_range(-3.0..5.0)).collect()).unwrap()
    }

    #[test]
    fn train_mode_standardises_each_channel() {
        let x = random_input(3);
        let ones = Tensor::filled(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        let out = batchnorm2d(&x, &ones, &zeros, &zeros, &ones, Mode::Train).unwrap();
        for ch in 0..3 {
            let (m, v) = channel_stats(&out.y, ch);
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-3);
        }
        assert!(out.running.is_some());
    }

    #[test]
    fn affine_parameters_shift_and_scale() {
        let x = random_input(4);
        let ones = Tensor::filled(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        let gamma = Tensor::filled(&[3], 2.0);
        let beta = Tensor::filled(&[3], 3.0);
        let out = batchnorm2d(&x, &gamma, &beta, &zeros, &ones, Mode::Train).unwrap();
        for ch in 0..3 {
            let (m, v) = channel_stats(&out.y, ch);
            assert!((m - 3.0).abs() < 1e-9);
            assert!((v.sqrt() - 2.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_mode_matches_scalar_formula() {
        let x = random_input(5);
        let gamma = Tensor::from_vec(&[3], vec![0.5, 1.5, -1.0]).unwrap();
        let beta = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let rm = Tensor::from_vec(&[3], vec![0.7, -1.1, 2.0]).unwrap();
        let rv = Tensor::from_vec(&[3], vec![1.3, 0.4, 2.5]).unwrap();
        let out = batchnorm2d(&x, &gamma, &beta, &rm, &rv, Mode::Eval).unwrap();
        assert!(out.running.is_none());
        let plane = 30;
        for (i, (&xv, &yv)) in x.data().iter().zip(out.y.data()).enumerate() {
            let ch = (i / plane) % 3;
            let want = (xv - rm.data()[ch]) / (rv.data()[ch] + 1e-5).sqrt() * gamma.data()[ch]
                + beta.data()[ch];
            assert!((yv - want).abs() < 1e-6);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = random_input(6);
        let ones = Tensor::filled(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        let out = batchnorm2d(&x, &ones, &zeros, &zeros, &ones, Mode::Train).unwrap();
        let (rm, rv) = out.running.unwrap();
        // recompute channel 0 batch statistics from the raw input
        let (m, v) = channel_stats(&x, 0);
        let n = 4.0 * 30.0;
        assert!((rm.data()[0] - 0.1 * m).abs() < 1e-12);
        assert!((rv.data()[0] - (0.9 + 0.1 * v * n / (n - 1.0))).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_parameter_length() {
        let x = random_input(1);
        let bad = Tensor::filled(&[2], 1.0);
        let ok = Tensor::filled(&[3], 1.0);
        assert!(matches!(
            batchnorm2d(&x, &bad, &ok, &ok, &ok, Mode::Train),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
