//! Finite-difference cases for every differentiable op, each on random small
//! shapes drawn from a seed. The objective is `sum(out * R)` for a fixed
//! random `R`, so the analytic gradient is the backward pass fed with `R`.

use hvlad::nn::{
    batchnorm2d, batchnorm2d_backward, conv2d, conv2d_backward, grad_check, linear, linear_backward, maxpool2d,
    maxpool2d_backward, relu, relu_backward, softmax_cross_entropy, Conv2dSpec, Coordinates, GradCheckReport, Mode,
    Pool2dSpec, Tensor,
};
use hvlad::vlad::{netvlad_aggregate, netvlad_backward, VladOptions, VladParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DELTA: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values at least `gap / 2` away from zero.
fn off_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    random(shape, rng).map(|v| if v.abs() < gap { v.signum() * (gap + v.abs()) } else { v })
}

/// A shuffled, well-separated set of values, so window maxima are unique.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5 + rng.gen_range(0.0..0.2 / n as f64)).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Splits `flat` into tensors of the given shapes.
fn unpack(flat: &[f64], shapes: &[&[usize]]) -> Vec<Tensor<f64>> {
    let mut at = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::from_vec(s, flat[at..at + n].to_vec()).unwrap();
            at += n;
            t
        })
        .collect()
}

fn pack(ts: &[&Tensor<f64>]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn check<F>(params: Vec<f64>, f: F) -> GradCheckReport
where
    F: FnMut(&[f64]) -> hvlad::Result<(f64, Vec<f64>)>,
{
    grad_check(f, &params, DELTA, Coordinates::All).unwrap()
}

pub fn conv(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (b, ci, co) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
    let (k, stride, pad) = (r.gen_range(1..=3), r.gen_range(1..=2), r.gen_range(0..=1));
    let (h, w) = (r.gen_range(k..=5), r.gen_range(k..=5));
    let spec = Conv2dSpec::new(stride, pad);
    let xs = [b, ci, h, w];
    let ws = [co, ci, k, k];
    let x = random(&xs, &mut r);
    let wt = random(&ws, &mut r);
    let bias = random(&[co], &mut r);
    let proj = random(conv2d(&x, &wt, Some(&bias), spec).unwrap().shape(), &mut r);
    check(pack(&[&x, &wt, &bias]), |p| {
        let t = unpack(p, &[&xs, &ws, &[co]]);
        let y = conv2d(&t[0], &t[1], Some(&t[2]), spec)?;
        let g = conv2d_backward(&t[0], &t[1], true, spec, &proj)?;
        Ok((dot(&y, &proj), pack(&[&g.dx, &g.dw, g.db.as_ref().unwrap()])))
    })
}

pub fn batchnorm(seed: u64, mode: Mode) -> GradCheckReport {
    let mut r = rng(seed);
    let (b, c, h, w) = (r.gen_range(2..=3), r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3));
    let xs = [b, c, h, w];
    let x = random(&xs, &mut r);
    let gamma = random(&[c], &mut r);
    let beta = random(&[c], &mut r);
    let rm = random(&[c], &mut r);
    let rv = random(&[c], &mut r).map(|v| v.abs() + 0.5);
    let proj = random(&xs, &mut r);
    check(pack(&[&x, &gamma, &beta]), |p| {
        let t = unpack(p, &[&xs, &[c], &[c]]);
        let out = batchnorm2d(&t[0], &t[1], &t[2], &rm, &rv, mode)?;
        let g = batchnorm2d_backward(&out.cache, &t[1], mode, &proj)?;
        Ok((dot(&out.y, &proj), pack(&[&g.dx, &g.dgamma, &g.dbeta])))
    })
}

pub fn relu_case(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let shape = [r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4)];
    let x = off_zero(&shape, 0.01, &mut r);
    let proj = random(&shape, &mut r);
    check(x.data().to_vec(), |p| {
        let x = Tensor::from_vec(&shape, p.to_vec())?;
        let y = relu(&x);
        Ok((dot(&y, &proj), relu_backward(&y, &proj)?.into_data()))
    })
}

pub fn maxpool(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (k, stride) = (r.gen_range(1..=3), r.gen_range(1..=2));
    let pad = r.gen_range(0..k);
    let xs = [r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(k..=5), r.gen_range(k..=5)];
    let spec = Pool2dSpec::square(k, stride, pad);
    let x = distinct(&xs, &mut r);
    let proj = random(maxpool2d(&x, spec).unwrap().y.shape(), &mut r);
    check(x.data().to_vec(), |p| {
        let x = Tensor::from_vec(&xs, p.to_vec())?;
        let out = maxpool2d(&x, spec)?;
        Ok((dot(&out.y, &proj), maxpool2d_backward(&xs, &out.argmax, &proj)?.into_data()))
    })
}

/// Full-height frequency pooling, kernel `(H, 1)`, as used before aggregation.
pub fn frequency_pool(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let xs = [r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=5), r.gen_range(1..=5)];
    let spec = Pool2dSpec {
        kernel: (xs[2], 1),
        stride: (1, 1),
        pad: (0, 0),
    };
    let x = distinct(&xs, &mut r);
    let proj = random(maxpool2d(&x, spec).unwrap().y.shape(), &mut r);
    check(x.data().to_vec(), |p| {
        let x = Tensor::from_vec(&xs, p.to_vec())?;
        let out = maxpool2d(&x, spec)?;
        Ok((dot(&out.y, &proj), maxpool2d_backward(&xs, &out.argmax, &proj)?.into_data()))
    })
}

pub fn linear_case(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (b, di, dout) = (r.gen_range(1..=4), r.gen_range(1..=5), r.gen_range(1..=5));
    let x = random(&[b, di], &mut r);
    let w = random(&[dout, di], &mut r);
    let bias = random(&[dout], &mut r);
    let proj = random(&[b, dout], &mut r);
    check(pack(&[&x, &w, &bias]), |p| {
        let t = unpack(p, &[&[b, di], &[dout, di], &[dout]]);
        let y = linear(&t[0], &t[1], &t[2])?;
        let g = linear_backward(&t[0], &t[1], &proj)?;
        Ok((dot(&y, &proj), pack(&[&g.dx, &g.dw, &g.db])))
    })
}

pub fn cross_entropy(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (b, n) = (r.gen_range(1..=4), r.gen_range(2..=6));
    let logits = random(&[b, n], &mut r).map(|v| 3.0 * v);
    let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..n)).collect();
    check(logits.data().to_vec(), |p| {
        let (loss, g) = softmax_cross_entropy(&Tensor::from_vec(&[b, n], p.to_vec())?, &labels)?;
        Ok((loss, g.into_data()))
    })
}

pub fn netvlad(seed: u64, intra_norm: bool) -> GradCheckReport {
    let mut r = rng(seed);
    let (n, d, k) = (r.gen_range(1..=6), r.gen_range(1..=5), r.gen_range(2..=4));
    let opts = VladOptions {
        intra_norm,
        ..VladOptions::default()
    };
    let x = random(&[n, d], &mut r);
    let c = random(&[k, d], &mut r);
    let w = random(&[k, d], &mut r);
    let b = random(&[k], &mut r);
    let proj = random(&[k * d], &mut r);
    check(pack(&[&x, &c, &w, &b]), |p| {
        let t = unpack(p, &[&[n, d], &[k, d], &[k, d], &[k]]);
        let vp = VladParams::new(t[1].clone(), t[2].clone(), t[3].clone())?;
        let (v, cache) = netvlad_aggregate(&t[0], &vp, opts)?;
        let g = netvlad_backward(&t[0], &vp, opts, &cache, &proj)?;
        Ok((dot(&v, &proj), pack(&[&g.dx, &g.params.centroids, &g.params.assign_w, &g.params.assign_b])))
    })
}

/// conv -> relu -> linear -> cross-entropy on random small shapes. Draws
/// are repeated until no pre-activation lies within 1e-3 of the ReLU kink.
pub fn stack(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (b, ci, co, k) = (r.gen_range(1..=3), r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
    let (h, w) = (r.gen_range(k..=4), r.gen_range(k..=4));
    let spec = Conv2dSpec::new(1, 0);
    let (ho, wo) = (h - k + 1, w - k + 1);
    let feat = co * ho * wo;
    let n_cls = r.gen_range(2..=4);
    let xs = [b, ci, h, w];
    let ws = [co, ci, k, k];
    let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..n_cls)).collect();
    let (x, wt, bias, fw, fb) = loop {
        let x = random(&xs, &mut r);
        let wt = random(&ws, &mut r);
        let bias = random(&[co], &mut r);
        let z = conv2d(&x, &wt, Some(&bias), spec).unwrap();
        if z.data().iter().all(|v| v.abs() > 1e-3) {
            break (x, wt, bias, random(&[n_cls, feat], &mut r), random(&[n_cls], &mut r));
        }
    };
    let shapes: [&[usize]; 5] = [&xs, &ws, &[co], &[n_cls, feat], &[n_cls]];
    check(pack(&[&x, &wt, &bias, &fw, &fb]), |p| {
        let t = unpack(p, &shapes);
        let z = conv2d(&t[0], &t[1], Some(&t[2]), spec)?;
        let a = relu(&z);
        let flat = a.clone().reshape(&[b, feat])?;
        let logits = linear(&flat, &t[3], &t[4])?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
        let lg = linear_backward(&flat, &t[3], &dlogits)?;
        let da = relu_backward(&a, &lg.dx.reshape(a.shape())?)?;
        let cg = conv2d_backward(&t[0], &t[1], true, spec, &da)?;
        Ok((loss, pack(&[&cg.dx, &cg.dw, cg.db.as_ref().unwrap(), &lg.dw, &lg.db])))
    })
}
