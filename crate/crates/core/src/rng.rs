//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own named stream derived from
//! the master seed, so enabling one feature never shifts another feature's
//! draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Sampler = 3,
    DiffusionNoise = 4,
    Split = 5,
    Synthetic = 6,
    Eval = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, stream, index)`; `index` is typically an
/// epoch or batch number.
pub fn stream(seed: u64, stream: Stream, index: u64) -> StreamRng {
    let key = splitmix64(seed ^ splitmix64(stream as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

pub fn gaussian<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for x in out {
        *x = StandardNormal.sample(rng);
    }
}
