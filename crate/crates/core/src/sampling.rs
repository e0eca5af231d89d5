//! Seeded pseudo-random state sampling.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fields::StateVector;

/// Half-width of the sampling box `[-2, 2]^n`.
pub const SAMPLE_HALF_WIDTH: f64 = 2.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `count` states drawn componentwise uniform on `[-2, 2]`.
pub fn sample_states(dim: usize, count: usize, seed: u64) -> Vec<StateVector> {
    let mut r = rng(seed);
    (0..count).map(|_| random_state(&mut r, dim)).collect()
}

pub fn random_state<R: Rng>(r: &mut R, dim: usize) -> StateVector {
    DVector::from_iterator(
        dim,
        (0..dim).map(|_| r.random_range(-SAMPLE_HALF_WIDTH..=SAMPLE_HALF_WIDTH)),
    )
}

/// `count` pairs `(x, x')`, both uniform on `[-2, 2]^n`.
pub fn sample_pairs(dim: usize, count: usize, seed: u64) -> Vec<(StateVector, StateVector)> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| (random_state(&mut r, dim), random_state(&mut r, dim)))
        .collect()
}
