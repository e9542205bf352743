//! Named random substreams derived from one root seed.
//!
//! Every consumer of randomness asks for a stream by `(stream, ids...)`.
//! The key is mixed with SplitMix64 into a ChaCha8 seed, so a stream's
//! output depends only on its key, never on the order streams are opened
//! or on how many worker threads run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies a randomness consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Sampling,
    Init,
    Data,
    Reduce,
    Probe,
    Shuffle,
    KMeans,
    RandomSearch,
    Supernet,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Sampling => 0x5a11,
            Stream::Init => 0x1a17,
            Stream::Data => 0xda7a,
            Stream::Reduce => 0x4ed0,
            Stream::Probe => 0x940b,
            Stream::Shuffle => 0x5f1e,
            Stream::KMeans => 0x4a3e,
            Stream::RandomSearch => 0x4a5d,
            Stream::Supernet => 0x5b9e,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes the root seed, stream tag and any ids into one 64-bit key.
pub fn derive_key(root: u64, stream: Stream, ids: &[u64]) -> u64 {
    let mut h = splitmix64(root ^ splitmix64(stream.tag()));
    for &id in ids {
        h = splitmix64(h ^ splitmix64(id.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

/// Opens the generator for `(root, stream, ids)`.
pub fn rng(root: u64, stream: Stream, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(root, stream, ids))
}
