//! Counter-based random streams.
//!
//! Every random draw in the crate comes from `stream(key, id)`: a ChaCha8
//! generator keyed by a 64-bit seed with an independent 64-bit stream id.
//! Work that is split over sample indices takes one stream per index, so the
//! output never depends on how the indices are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags mixed into the key so that one user seed can feed several
/// unrelated consumers without correlated streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Embedding = 0x656d_6265_6464,
    Data = 0x6461_7461,
    Noise = 0x6e6f_6973_65,
    Sampler = 0x7361_6d70,
    Memorized = 0x6d65_6d6f,
    Proxy = 0x7072_6f78,
    Tangent = 0x7461_6e67,
}

/// Raw stream contract: same `(seed, stream_id)` always yields the same sequence.
pub fn stream(seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Stream `index` of the given domain under `seed`.
pub fn substream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    stream(mix(seed, domain as u64), index)
}

/// Derive a child seed, e.g. one per experiment cell.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(seed, tag)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}
