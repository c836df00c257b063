//! Named random substreams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: &str = "init";
pub const VARIATION: &str = "variation";
pub const TOURNAMENT: &str = "tournament";
pub const SYNTHETIC_NOISE: &str = "synthetic-noise";
pub const STUDY: &str = "study";

/// ChaCha8 keyed by `seed`, on the stream selected by the FNV-1a hash of `name`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// A derived 64-bit seed, for consumers that take a plain seed.
pub fn derived_seed(seed: u64, name: &str) -> u64 {
    use rand::RngCore;
    substream(seed, name).next_u64()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
