use rand::Rng;

use super::tensor::Tensor;
use crate::scalar::Scalar;

/// He-uniform: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn he_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

pub fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_bound_and_determinism() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let t: Tensor<f32> = he_uniform(&[8, 3, 3, 3], 27, &mut a);
        let u: Tensor<f32> = he_uniform(&[8, 3, 3, 3], 27, &mut b);
        assert_eq!(t, u);
        let bound = (6.0f32 / 27.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }
}
