#![allow(dead_code)]

use dlsurface::{DatasetPair, Mat, NetworkShape, WeightStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random `r × c` matrix of rank `min(rank, r, c)`.
pub fn with_rank(r: usize, c: usize, rank: usize, rng: &mut ChaCha8Rng) -> Mat {
    let k = rank.min(r).min(c);
    gaussian(r, k, rng) * gaussian(k, c, rng)
}

pub fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Mat {
    gaussian(n, n, rng).qr().q()
}

/// A random instance with `H ∈ {1,2,3}`, widths in `1..=4`, `m ≤ 8`.
pub fn instance(seed: u64) -> (WeightStack, DatasetPair) {
    let mut rng = rng(seed);
    let h = rng.random_range(1..=3);
    let widths: Vec<usize> = (0..h + 2).map(|_| rng.random_range(1..=4)).collect();
    let shape = NetworkShape::new(widths).unwrap();
    let m = rng.random_range(1..=8);
    let x = gaussian(shape.dx(), m, &mut rng);
    let y = gaussian(shape.dy(), m, &mut rng);
    let w = WeightStack::random(&shape, 0.8, &mut rng);
    (w, DatasetPair::new(x, y).unwrap())
}

/// Data satisfying all landscape hypotheses: `d_y ≤ d_x ≤ m`, generic.
pub fn generic_data(dx: usize, dy: usize, m: usize, rng: &mut ChaCha8Rng) -> DatasetPair {
    let x = gaussian(dx, m, rng);
    let y = gaussian(dy, m, rng);
    DatasetPair::new(x, y).unwrap()
}

pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
