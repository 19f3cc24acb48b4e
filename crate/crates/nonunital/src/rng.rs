//! Seeded, counter-based random streams.
//!
//! Every random object is drawn from a ChaCha stream keyed by `(seed, stream)`.
//! Sample `i` of an ensemble always uses stream `i`, so results do not depend
//! on the number of worker threads or on the order in which samples finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator type used by all samplers.
pub type StreamRng = ChaCha8Rng;

/// Returns the generator for stream `stream` of master seed `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a sub-seed so that independent experiment parts never share streams.
pub fn subseed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
