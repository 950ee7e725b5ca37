//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator whose 256-bit key is derived from a
//! root seed, a stream tag and a tuple of indices (epoch, node, walk index, ...). Derivation
//! folds each word through SplitMix64, so a stream depends only on its coordinates and never on
//! the order in which other streams were consumed. That makes parallel and sequential runs
//! produce the same values on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags keep streams for different purposes disjoint even when their indices coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Walks = 1,
    Shuffle = 2,
    Neighbors = 3,
    Candidates = 4,
    Init = 5,
    Splits = 6,
    Projection = 7,
    Inference = 8,
    Protocol = 9,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed, a stream tag and indices into one 64-bit sub-seed.
pub fn derive_seed(root: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(root ^ (stream as u64).rotate_left(32));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    h
}

/// A generator for the stream at the given coordinates.
pub fn stream(root: u64, stream: Stream, indices: &[u64]) -> StreamRng {
    let base = derive_seed(root, stream, indices);
    let mut key = [0u8; 32];
    let mut w = base;
    for chunk in key.chunks_exact_mut(8) {
        w = splitmix64(w);
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
