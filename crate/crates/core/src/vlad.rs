//! NetVLAD aggregation of local descriptors into a fixed-length unit vector.
//!
//! For descriptors `x_i` (rows of `X: [N, D]`) and `K` clusters:
//!
//! ```text
//! a_ik   = softmax_k(w_k . x_i + b_k)
//! V[k,j] = sum_i a_ik (x_i[j] - c_k[j])
//! V[k,:] <- V[k,:] / (|V[k,:]| + eps)      (intra-normalisation, optional)
//! v      <- flatten(V) / (|flatten(V)| + eps)
//! ```

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

pub const VLAD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct VladParams<T> {
    /// `[K, D]`
    pub centroids: Tensor<T>,
    /// `[K, D]`
    pub assign_w: Tensor<T>,
    /// `[K]`
    pub assign_b: Tensor<T>,
}

impl<T: Scalar> VladParams<T> {
    pub fn new(centroids: Tensor<T>, assign_w: Tensor<T>, assign_b: Tensor<T>) -> Result<Self> {
        let (k, d) = centroids.dims2()?;
        if k < 2 {
            return Err(Error::InvalidConfig(format!("VLAD needs K >= 2, got {k}")));
        }
        if assign_w.shape() != [k, d] || assign_b.shape() != [k] {
            return Err(Error::shape(format!(
                "VLAD params: c {:?}, W_a {:?}, b_a {:?}",
                centroids.shape(),
                assign_w.shape(),
                assign_b.shape()
            )));
        }
        Ok(Self {
            centroids,
            assign_w,
            assign_b,
        })
    }

    /// Assignment weights for which the soft assignment approaches
    /// nearest-centroid assignment as `tau` grows:
    /// `W_a[k] = 2 tau c_k`, `b_a[k] = -tau |c_k|^2`.
    pub fn from_centroids(centroids: Tensor<T>, tau: f64) -> Result<Self> {
        let (k, d) = centroids.dims2()?;
        let tau = T::lit(tau);
        let two = T::lit(2.0);
        let w = centroids.map(|c| two * tau * c);
        let b = (0..k)
            .map(|ki| {
                let row = &centroids.data()[ki * d..(ki + 1) * d];
                -tau * row.iter().map(|&c| c * c).sum::<T>()
            })
            .collect();
        Self::new(centroids, w, Tensor::from_vec(&[k], b)?)
    }

    pub fn clusters(&self) -> usize {
        self.centroids.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.centroids.shape()[1]
    }

    pub fn num_elements(&self) -> usize {
        self.centroids.len() + self.assign_w.len() + self.assign_b.len()
    }
}

/// How descriptors are weighted into each cluster's residual sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Assignment {
    /// Learned softmax assignment (NetVLAD).
    #[default]
    Soft,
    /// Every descriptor contributes to every cluster with weight 1: the
    /// literal unweighted residual sum. Kept for experiments.
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VladOptions {
    pub intra_norm: bool,
    pub assignment: Assignment,
}

impl Default for VladOptions {
    fn default() -> Self {
        Self {
            intra_norm: true,
            assignment: Assignment::Soft,
        }
    }
}

fn check_descriptors<T: Scalar>(x: &Tensor<T>, d: usize) -> Result<usize> {
    let (n, dx) = x.dims2()?;
    if dx != d {
        return Err(Error::shape(format!(
            "descriptors have dimension {dx}, clusters expect {d}"
        )));
    }
    Ok(n)
}

/// Softmax over clusters of the affine scores `W_a x_i + b_a`; `[N, K]`.
pub fn soft_assign<T: Scalar>(x: &Tensor<T>, assign_w: &Tensor<T>, assign_b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, d) = assign_w.dims2()?;
    if assign_b.shape() != [k] {
        return Err(Error::shape(format!("b_a {:?} for {k} clusters", assign_b.shape())));
    }
    let n = check_descriptors(x, d)?;
    let mut a = vec![T::zero(); n * k];
    for (xi, row) in x.data().chunks(d).zip(a.chunks_mut(k)) {
        for (kk, s) in row.iter_mut().enumerate() {
            let w = &assign_w.data()[kk * d..(kk + 1) * d];
            *s = assign_b.data()[kk] + w.iter().zip(xi).map(|(&a, &b)| a * b).sum::<T>();
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            z += *s;
        }
        for s in row.iter_mut() {
            *s /= z;
        }
    }
    Tensor::from_vec(&[n, k], a)
}

/// Euclidean norm, scaled by the largest magnitude so tiny f32 rows do not
/// underflow.
fn norm<T: Scalar>(z: &[T]) -> T {
    let m = z.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    if m == T::zero() {
        return m;
    }
    m * z.iter().map(|&v| (v / m) * (v / m)).sum::<T>().sqrt()
}

/// `z / (|z| + eps)`, returning the norm.
fn l2_normalize<T: Scalar>(z: &[T]) -> (Vec<T>, T) {
    let r = norm(z);
    let denom = r + T::lit(VLAD_EPS);
    (z.iter().map(|&v| v / denom).collect(), r)
}

/// With `u = z / r`: `dz = dy / (r + eps) - u (u . dy) r / (r + eps)^2`,
/// arranged so no intermediate underflows for tiny `r`.
fn l2_normalize_backward<T: Scalar>(z: &[T], r: T, dy: &[T]) -> Vec<T> {
    let denom = r + T::lit(VLAD_EPS);
    if r <= T::zero() {
        return dy.iter().map(|&g| g / denom).collect();
    }
    let u: Vec<T> = z.iter().map(|&v| v / r).collect();
    let coef = u.iter().zip(dy).map(|(&a, &b)| a * b).sum::<T>() * (r / denom) / denom;
    u.iter().zip(dy).map(|(&ui, &gi)| gi / denom - ui * coef).collect()
}

/// Forward intermediates needed by [`netvlad_backward`].
#[derive(Debug, Clone)]
pub struct VladCache<T> {
    assign: Tensor<T>,
    residual_sum: Vec<T>,
    row_norms: Vec<T>,
    intra: Vec<T>,
    global_norm: T,
}

impl<T: Scalar> VladCache<T> {
    pub fn assignment(&self) -> &Tensor<T> {
        &self.assign
    }

    /// Residual sums `V` before any normalisation, `[K * D]` row-major.
    pub fn residual_sum(&self) -> &[T] {
        &self.residual_sum
    }
}

fn residual_sums<T: Scalar>(x: &[T], a: &[T], c: &[T], n: usize, k: usize, d: usize) -> Vec<T> {
    let mut v = vec![T::zero(); k * d];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        for kk in 0..k {
            let w = a[i * k + kk];
            let row = &mut v[kk * d..(kk + 1) * d];
            let ck = &c[kk * d..(kk + 1) * d];
            for j in 0..d {
                row[j] += w * (xi[j] - ck[j]);
            }
        }
    }
    v
}

fn normalize_stages<T: Scalar>(v: &[T], k: usize, d: usize, intra_norm: bool) -> (Vec<T>, Vec<T>, Vec<T>, T) {
    let mut intra = Vec::with_capacity(k * d);
    let mut row_norms = Vec::with_capacity(k);
    if intra_norm {
        for row in v.chunks(d) {
            let (y, r) = l2_normalize(row);
            intra.extend(y);
            row_norms.push(r);
        }
    } else {
        intra.extend_from_slice(v);
    }
    let (out, global_norm) = l2_normalize(&intra);
    (out, row_norms, intra, global_norm)
}

/// Aggregates `x: [N, D]` into a `[K * D]` vector of unit L2 norm (unless
/// every residual is zero).
pub fn netvlad_aggregate<T: Scalar>(
    x: &Tensor<T>,
    params: &VladParams<T>,
    opts: VladOptions,
) -> Result<(Tensor<T>, VladCache<T>)> {
    let (k, d) = (params.clusters(), params.dim());
    let n = check_descriptors(x, d)?;
    let assign = match opts.assignment {
        Assignment::Soft => soft_assign(x, &params.assign_w, &params.assign_b)?,
        Assignment::Unweighted => Tensor::filled(&[n, k], T::one()),
    };
    let v = residual_sums(x.data(), assign.data(), params.centroids.data(), n, k, d);
    let (out, row_norms, intra, global_norm) = normalize_stages(&v, k, d, opts.intra_norm);
    Ok((
        Tensor::from_vec(&[k * d], out)?,
        VladCache {
            assign,
            residual_sum: v,
            row_norms,
            intra,
            global_norm,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct VladGrads<T> {
    pub dx: Tensor<T>,
    pub params: VladParams<T>,
}

pub fn netvlad_backward<T: Scalar>(
    x: &Tensor<T>,
    params: &VladParams<T>,
    opts: VladOptions,
    cache: &VladCache<T>,
    dv: &Tensor<T>,
) -> Result<VladGrads<T>> {
    let (k, d) = (params.clusters(), params.dim());
    let n = check_descriptors(x, d)?;
    if dv.shape() != [k * d] {
        return Err(Error::shape(format!("VLAD upstream gradient {:?}", dv.shape())));
    }
    let d_intra = l2_normalize_backward(&cache.intra, cache.global_norm, dv.data());
    let d_res: Vec<T> = if opts.intra_norm {
        cache
            .residual_sum
            .chunks(d)
            .zip(d_intra.chunks(d))
            .zip(&cache.row_norms)
            .flat_map(|((z, g), &r)| l2_normalize_backward(z, r, g))
            .collect()
    } else {
        d_intra
    };

    let (xd, a, c) = (x.data(), cache.assign.data(), params.centroids.data());
    let mut dx = vec![T::zero(); n * d];
    let mut dc = vec![T::zero(); k * d];
    let mut da = vec![T::zero(); n * k];
    for i in 0..n {
        let xi = &xd[i * d..(i + 1) * d];
        for kk in 0..k {
            let w = a[i * k + kk];
            let g = &d_res[kk * d..(kk + 1) * d];
            let ck = &c[kk * d..(kk + 1) * d];
            let mut acc = T::zero();
            for j in 0..d {
                acc += g[j] * (xi[j] - ck[j]);
                dx[i * d + j] += w * g[j];
                dc[kk * d + j] -= w * g[j];
            }
            da[i * k + kk] = acc;
        }
    }

    let mut dw = vec![T::zero(); k * d];
    let mut db = vec![T::zero(); k];
    if opts.assignment == Assignment::Soft {
        let wa = params.assign_w.data();
        for i in 0..n {
            let xi = &xd[i * d..(i + 1) * d];
            let ai = &a[i * k..(i + 1) * k];
            let dai = &da[i * k..(i + 1) * k];
            let mean: T = ai.iter().zip(dai).map(|(&p, &g)| p * g).sum();
            for kk in 0..k {
                let ds = ai[kk] * (dai[kk] - mean);
                db[kk] += ds;
                for j in 0..d {
                    dw[kk * d + j] += ds * xi[j];
                    dx[i * d + j] += ds * wa[kk * d + j];
                }
            }
        }
    }

    Ok(VladGrads {
        dx: Tensor::from_vec(&[n, d], dx)?,
        params: VladParams {
            centroids: Tensor::from_vec(&[k, d], dc)?,
            assign_w: Tensor::from_vec(&[k, d], dw)?,
            assign_b: Tensor::from_vec(&[k], db)?,
        },
    })
}

/// Index of the nearest centroid by Euclidean distance; ties go to the lowest index.
pub fn nearest_centroid<T: Scalar>(xi: &[T], centroids: &[T], d: usize) -> usize {
    let mut best = 0;
    let mut best_dist = T::infinity();
    for (kk, ck) in centroids.chunks(d).enumerate() {
        let dist: T = xi.iter().zip(ck).map(|(&a, &b)| (a - b) * (a - b)).sum();
        if dist < best_dist {
            best = kk;
            best_dist = dist;
        }
    }
    best
}

/// Classic hard-assignment VLAD with the same two-stage normalisation.
pub fn vlad_hard_oracle<T: Scalar>(x: &Tensor<T>, centroids: &Tensor<T>, intra_norm: bool) -> Result<Tensor<T>> {
    let (k, d) = centroids.dims2()?;
    let n = check_descriptors(x, d)?;
    let mut a = vec![T::zero(); n * k];
    for (i, xi) in x.data().chunks(d).enumerate() {
        a[i * k + nearest_centroid(xi, centroids.data(), d)] = T::one();
    }
    let v = residual_sums(x.data(), &a, centroids.data(), n, k, d);
    let (out, ..) = normalize_stages(&v, k, d, intra_norm);
    Tensor::from_vec(&[k * d], out)
}

/// Lloyd's k-means seeded by `k` distinct random descriptors. Empty clusters
/// keep their previous centroid.
pub fn kmeans<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, k: usize, iterations: usize, rng: &mut R) -> Result<Tensor<T>> {
    let (n, d) = x.dims2()?;
    if k == 0 {
        return Err(Error::InvalidConfig("k-means with zero clusters".into()));
    }
    let xd = x.data();
    let mut c = Vec::with_capacity(k * d);
    if n >= k {
        for i in sample(rng, n, k).into_iter() {
            c.extend_from_slice(&xd[i * d..(i + 1) * d]);
        }
    } else {
        // fewer descriptors than clusters: reuse them with a small jitter
        for kk in 0..k {
            let i = kk % n;
            c.extend(xd[i * d..(i + 1) * d].iter().map(|&v| v + T::lit(rng.gen_range(-1e-3..1e-3))));
        }
    }
    let mut assign = vec![0usize; n];
    for _ in 0..iterations {
        for (i, xi) in xd.chunks(d).enumerate() {
            assign[i] = nearest_centroid(xi, &c, d);
        }
        let mut sums = vec![T::zero(); k * d];
        let mut counts = vec![0usize; k];
        for (i, xi) in xd.chunks(d).enumerate() {
            counts[assign[i]] += 1;
            for (s, &v) in sums[assign[i] * d..(assign[i] + 1) * d].iter_mut().zip(xi) {
                *s += v;
            }
        }
        for kk in 0..k {
            if counts[kk] > 0 {
                let inv = T::one() / T::from_usize_lossy(counts[kk]);
                for j in 0..d {
                    c[kk * d + j] = sums[kk * d + j] * inv;
                }
            }
        }
    }
    Tensor::from_vec(&[k, d], c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_params(k: usize, d: usize, rng: &mut ChaCha8Rng) -> VladParams<f64> {
        VladParams::new(random(&[k, d], rng), random(&[k, d], rng), random(&[k], rng)).unwrap()
    }

    #[test]
    fn nearly_empty_cluster_has_finite_f32_gradients() {
        // cluster 1 receives assignment weight ~exp(-60), so its residual
        // row norm is far below the range where r * (r + eps)^2 is representable
        let x = Tensor::from_vec(&[2, 2], vec![0.5f32, 0.2, 0.4, 0.3]).unwrap();
        let params = VladParams::new(
            Tensor::from_vec(&[2, 2], vec![0.0f32, 0.0, 1.0, 1.0]).unwrap(),
            Tensor::zeros(&[2, 2]),
            Tensor::from_vec(&[2], vec![0.0f32, -60.0]).unwrap(),
        )
        .unwrap();
        let opts = VladOptions::default();
        let (v, cache) = netvlad_aggregate(&x, &params, opts).unwrap();
        assert!(v.data().iter().all(|x| x.is_finite()));
        let g = netvlad_backward(&x, &params, opts, &cache, &Tensor::filled(&[4], 1.0f32)).unwrap();
        for t in [&g.dx, &g.params.centroids, &g.params.assign_w, &g.params.assign_b] {
            assert!(t.data().iter().all(|x| x.is_finite()), "{t:?}");
        }
    }

    #[test]
    fn zero_weights_give_uniform_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[4, 3], &mut rng);
        let a = soft_assign(&x, &Tensor::zeros(&[5, 3]), &Tensor::zeros(&[5])).unwrap();
        assert!(a.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn large_bias_saturates_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[3, 2], &mut rng);
        let b = Tensor::from_vec(&[3], vec![1000.0, 0.0, 0.0]).unwrap();
        let a = soft_assign(&x, &Tensor::zeros(&[3, 2]), &b).unwrap();
        for row in a.data().chunks(3) {
            assert!((row[0] - 1.0).abs() < 1e-12);
            assert!(row[1] < 1e-300 && row[2] < 1e-300);
        }
    }

    #[test]
    fn soft_assign_matches_scalar_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[3, 2], &mut rng);
        let w = random(&[2, 2], &mut rng);
        let b = random(&[2], &mut rng);
        let a = soft_assign(&x, &w, &b).unwrap();
        for i in 0..3 {
            let s: Vec<f64> = (0..2)
                .map(|k| b.data()[k] + w.data()[k * 2] * x.data()[i * 2] + w.data()[k * 2 + 1] * x.data()[i * 2 + 1])
                .collect();
            let z = s[0].exp() + s[1].exp();
            for k in 0..2 {
                assert!((a.data()[i * 2 + k] - s[k].exp() / z).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn zero_residual_row_for_descriptor_on_centroid() {
        let c = Tensor::from_vec(&[2, 2], vec![0.5, -0.25, 1.0, 1.0]).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![0.5, -0.25]).unwrap();
        let params = VladParams::new(
            c,
            Tensor::zeros(&[2, 2]),
            Tensor::from_vec(&[2], vec![1000.0, 0.0]).unwrap(),
        )
        .unwrap();
        let (v, cache) = netvlad_aggregate(&x, &params, VladOptions::default()).unwrap();
        assert!(cache.residual_sum()[..2].iter().all(|&r: &f64| r.abs() < 1e-15));
        assert!(v.data()[..2].iter().all(|&r: &f64| r.abs() < 1e-12));
    }

    #[test]
    fn output_has_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let x = random(&[5, 3], &mut rng);
            let p = random_params(4, 3, &mut rng);
            for intra_norm in [true, false] {
                let opts = VladOptions {
                    intra_norm,
                    ..Default::default()
                };
                let (v, _) = netvlad_aggregate(&x, &p, opts).unwrap();
                assert!((v.sq_norm().sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn hard_oracle_zero_when_descriptors_are_centroids() {
        let c = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let x = c.clone();
        let v = vlad_hard_oracle(&x, &c, true).unwrap();
        assert!(v.data().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn hard_oracle_single_descriptor_fills_nearest_cluster_only() {
        let c = Tensor::from_vec(&[2, 2], vec![0.0, 0.0, 5.0, 5.0]).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![1.0, -0.5]).unwrap();
        let v = vlad_hard_oracle(&x, &c, true).unwrap();
        assert!(v.data()[..2].iter().any(|&a| a != 0.0));
        assert!(v.data()[2..].iter().all(|&a| a == 0.0));
    }

    #[test]
    fn unweighted_assignment_is_literal_residual_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[4, 3], &mut rng);
        let p = random_params(2, 3, &mut rng);
        let opts = VladOptions {
            intra_norm: false,
            assignment: Assignment::Unweighted,
        };
        let (_, cache) = netvlad_aggregate(&x, &p, opts).unwrap();
        for k in 0..2 {
            for j in 0..3 {
                let want: f64 = (0..4).map(|i| x.data()[i * 3 + j]).sum::<f64>() - 4.0 * p.centroids.data()[k * 3 + j];
                assert!((cache.residual_sum()[k * 3 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kmeans_separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut data = Vec::new();
        for i in 0..40 {
            let centre = if i % 2 == 0 { -5.0 } else { 5.0 };
            data.push(centre + rng.gen_range(-0.5..0.5));
            data.push(centre + rng.gen_range(-0.5..0.5));
        }
        let x = Tensor::from_vec(&[40, 2], data).unwrap();
        let c = kmeans(&x, 2, 10, &mut rng).unwrap();
        let mut firsts: Vec<f64> = c.data().chunks(2).map(|r| r[0]).collect();
        firsts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((firsts[0] + 5.0f64).abs() < 0.5 && (firsts[1] - 5.0f64).abs() < 0.5);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[4, 3], &mut rng);
        let p = random_params(2, 4, &mut rng);
        assert!(matches!(
            netvlad_aggregate(&x, &p, VladOptions::default()),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(VladParams::new(Tensor::<f64>::zeros(&[1, 2]), Tensor::zeros(&[1, 2]), Tensor::zeros(&[1])).is_err());
    }
}
