//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! 64-bit seed and a 64-bit stream id. ChaCha streams with the same key are
//! independent, so Monte Carlo trial `i` uses `stream_rng(seed, i)` and obtains
//! the same numbers regardless of how trials are scheduled across threads.
//! Nested splitting (trial -> fold -> bootstrap replicate) goes through
//! [`derive_seed`], which mixes a parent seed with a tag.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for stream `stream` under key `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer applied to `seed ^ tag`; used to derive child seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream ids reserved for the different consumers of a seed.
pub mod streams {
    pub const TRUTH: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const FOLDS: u64 = 3;
    pub const SUBSAMPLE: u64 = 4;
    pub const TIES: u64 = 5;
    pub const SPLITS: u64 = 6;
    /// Bootstrap replicate `b` uses stream `BOOTSTRAP + b`.
    pub const BOOTSTRAP: u64 = 1 << 32;
}
