//! Independent reference implementations written as plain loops over
//! `Vec<f64>`, sharing no code with the library.

/// Soft-assignment VLAD: `a_ik = softmax_k(w_k . x_i + b_k)`,
/// `V_k = sum_i a_ik (x_i - c_k)`, optional per-row L2, then global L2,
/// each as `v / (|v| + 1e-12)`.
pub fn netvlad(x: &[Vec<f64>], c: &[Vec<f64>], w: &[Vec<f64>], b: &[f64], intra_norm: bool) -> Vec<f64> {
    let k = c.len();
    let d = c[0].len();
    let mut v = vec![vec![0.0; d]; k];
    for xi in x {
        let mut scores = vec![0.0; k];
        for kk in 0..k {
            let mut s = b[kk];
            for j in 0..d {
                s += w[kk][j] * xi[j];
            }
            scores[kk] = s;
        }
        let mut max = f64::NEG_INFINITY;
        for &s in &scores {
            if s > max {
                max = s;
            }
        }
        let mut z = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            z += *s;
        }
        for kk in 0..k {
            let a = scores[kk] / z;
            for j in 0..d {
                v[kk][j] += a * (xi[j] - c[kk][j]);
            }
        }
    }
    finish(v, intra_norm)
}

/// Hard-assignment VLAD: each descriptor adds its residual to the nearest
/// centroid only (ties to the lower index).
pub fn hard_vlad(x: &[Vec<f64>], c: &[Vec<f64>], intra_norm: bool) -> Vec<f64> {
    let d = c[0].len();
    let mut v = vec![vec![0.0; d]; c.len()];
    for xi in x {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (kk, ck) in c.iter().enumerate() {
            let mut dist = 0.0;
            for j in 0..d {
                dist += (xi[j] - ck[j]) * (xi[j] - ck[j]);
            }
            if dist < best_d {
                best_d = dist;
                best = kk;
            }
        }
        for j in 0..d {
            v[best][j] += xi[j] - c[best][j];
        }
    }
    finish(v, intra_norm)
}

fn finish(mut v: Vec<Vec<f64>>, intra_norm: bool) -> Vec<f64> {
    if intra_norm {
        for row in v.iter_mut() {
            let mut s = 0.0;
            for &e in row.iter() {
                s += e * e;
            }
            let n = s.sqrt() + 1e-12;
            for e in row.iter_mut() {
                *e /= n;
            }
        }
    }
    let mut flat = Vec::new();
    for row in &v {
        flat.extend_from_slice(row);
    }
    let mut s = 0.0;
    for &e in &flat {
        s += e * e;
    }
    let n = s.sqrt() + 1e-12;
    for e in flat.iter_mut() {
        *e /= n;
    }
    flat
}

/// Gap between the two smallest squared distances from `xi` to the centroids.
pub fn assignment_margin(xi: &[f64], c: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = c
        .iter()
        .map(|ck| ck.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d[1] - d[0]
}

/// Mean and sample standard deviation with explicit sums.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mut s = 0.0;
    for &x in v {
        s += x;
    }
    let m = s / n;
    let mut ss = 0.0;
    for &x in v {
        ss += (x - m) * (x - m);
    }
    (m, (ss / (n - 1.0)).sqrt())
}

/// Centered moving average with truncated windows at the edges.
pub fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut out = Vec::new();
    for i in 0..v.len() {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(v.len() - 1);
        let mut s = 0.0;
        for x in &v[lo..=hi] {
            s += x;
        }
        out.push(s / (hi - lo + 1) as f64);
    }
    out
}
