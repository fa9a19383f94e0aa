//! Seeded generators and parameter initializers.

use alloc::vec::Vec;

use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic generator used everywhere a seed is accepted.
pub type SeededRng = ChaCha8Rng;

/// Independent stream labels so that, for one user seed, backbone synthesis,
/// trainable initialization, shuffling and episode sampling never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Backbone = 1,
    Init = 2,
    Shuffle = 3,
    Episode = 4,
    Data = 5,
}

pub fn rng_for(seed: u64, stream: Stream, index: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}

/// He/Kaiming uniform init for a `fan_in x fan_out` matrix: `U(-b, b)`, `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform(rng: &mut SeededRng, fan_in: usize, len: usize) -> Vec<f32> {
    let bound = Float::sqrt(6.0 / fan_in as f64) as f32;
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Uniform init in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual linear-layer default.
pub fn linear_uniform(rng: &mut SeededRng, fan_in: usize, len: usize) -> Vec<f32> {
    let bound = 1.0 / Float::sqrt(fan_in as f32);
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Box-Muller draw from N(0, 1), computed in `f64` with `libm` so the value
/// does not depend on the platform math library.
pub fn standard_normal(rng: &mut SeededRng) -> f32 {
    // 1 - U(0,1) lies in (0, 1], keeping the log finite
    let u1 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)) as f32
}

/// Normal(0, std) truncated to `[-2 std, 2 std]` by rejection.
pub fn trunc_normal(rng: &mut SeededRng, std: f32, len: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let z = standard_normal(rng);
        if z.abs() <= 2.0 {
            out.push(z * std);
        }
    }
    out
}
