//! Seeded random substreams.
//!
//! Every batch item `i` draws from its own ChaCha8 stream: the 64-bit seed
//! selects the key and `i` selects the stream. Item `i` therefore sees the same
//! numbers whatever order or thread it is evaluated on.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn substream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform permutation of `0..n` (Fisher-Yates).
pub fn random_permutation(rng: &mut StreamRng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}
