//! Counter-based random streams keyed by `(seed, run, step)`.

use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream for draw block `step` of run `run` under `seed`.
///
/// Blocks are 2^40 words apart, so any step consumes far fewer words than
/// would be needed to overlap its successor.
pub fn stream(seed: u64, run: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng.set_word_pos(u128::from(step) << 40);
    rng
}

/// One standard normal draw.
pub fn normal<R: RngCore>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Fills `out` with standard normals.
pub fn fill_normal<R: RngCore>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// `n` standard normals.
pub fn normals<R: RngCore>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v = alloc::vec![0.0; n];
    fill_normal(rng, &mut v);
    v
}

/// Uniform on `[0, 1)` with 53 random bits.
pub fn uniform<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
