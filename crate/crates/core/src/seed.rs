//! Splittable seeding: one master seed, independent ChaCha streams per component.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers. Changing how one component draws numbers never
/// perturbs the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Environment = 1,
    Init = 2,
    Replay = 3,
    Exploration = 4,
    TargetNoise = 5,
    Evaluation = 6,
    Policy = 7,
    Synthetic = 8,
}

/// A generator for `stream` under `master`, optionally split further by `index`
/// (episode number, worker id, ...).
pub fn rng_for(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(master ^ splitmix(index)));
    rng.set_stream(stream as u64);
    rng
}

/// Derive a child seed; used when a component needs a plain `u64` seed.
pub fn child_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix(splitmix(master ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ index)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
