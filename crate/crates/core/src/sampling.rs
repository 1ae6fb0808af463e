//! Deterministic point sets: Halton sequences, sphere directions, seeded RNGs.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// Point `index` of the Halton sequence in `[0,1)^dim` (skipping index 0).
pub fn halton(index: u64, dim: usize) -> DVector<f64> {
    assert!(dim <= PRIMES.len());
    DVector::from_iterator(dim, (0..dim).map(|k| radical_inverse(index + 1, PRIMES[k])))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal via Box–Muller.
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Unit directions in `R^dim`. Planar: `count` equally spaced angles.
/// Higher dimensions: signed coordinate axes followed by seeded Gaussian directions.
pub fn sphere_directions(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    if dim == 2 {
        return (0..count)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / count as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect();
    }
    let mut out = Vec::with_capacity(count + 2 * dim);
    for k in 0..dim {
        for s in [1.0, -1.0] {
            let mut v = DVector::zeros(dim);
            v[k] = s;
            out.push(v);
        }
    }
    let mut r = rng(seed);
    while out.len() < count.max(2 * dim) {
        let v = DVector::from_iterator(dim, (0..dim).map(|_| gaussian(&mut r)));
        let norm = v.norm();
        if norm > 1e-12 {
            out.push(v / norm);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }

    #[test]
    fn directions_are_unit() {
        for d in sphere_directions(4, 50, 3) {
            assert!((d.norm() - 1.0).abs() < 1e-14);
        }
        assert_eq!(sphere_directions(2, 8, 0).len(), 8);
    }
}
