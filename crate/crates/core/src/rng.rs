//! Seeded tensor generators. Everything reproducible: the same seed always
//! yields the same bytes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Element, Tensor};

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in [-1, 1].
pub fn rand_tensor<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = rng_from_seed(seed);
    fill_uniform(shape, &mut rng)
}

pub fn fill_uniform<T: Element>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::of_f64(rng.random_range(-1.0..=1.0)))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("generator shape is valid")
}

/// Random values restricted to the dyadic grid 9k * 2^-24 with |k| <= 2^20.
///
/// Every value divides exactly by 4, 9 and 16, and sums of up to ~2^20 such
/// values stay exactly representable in f64, so norm identities that hold in
/// exact arithmetic (amplitude normalization, replication counting) hold
/// bit-exactly on these inputs. Magnitudes stay within [-0.5625, 0.5625].
pub fn rand_tensor_exact_grid<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = rng_from_seed(seed);
    let numel: usize = shape.iter().product();
    let scale = 2.0f64.powi(-24);
    let data = (0..numel)
        .map(|_| {
            let k: i64 = rng.random_range(-(1 << 20)..=(1 << 20));
            T::of_f64(9.0 * k as f64 * scale)
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("generator shape is valid")
}

/// Fan-in scaled uniform initialization for weights.
pub fn init_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::of_f64(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("generator shape is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f64> = rand_tensor(&[2, 3, 4, 5], 42);
        let b: Tensor<f64> = rand_tensor(&[2, 3, 4, 5], 42);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn grid_values_divide_exactly() {
        let t: Tensor<f64> = rand_tensor_exact_grid(&[64], 7);
        for &v in t.data() {
            assert!(v.abs() <= 0.5625);
            // v/9 and v/16 are exact: multiplying back recovers v bit-exactly.
            assert_eq!(v / 9.0 * 9.0, v);
            assert_eq!(v / 16.0 * 16.0, v);
        }
    }
}
