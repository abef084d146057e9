//! Counter-addressed random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by the
//! master seed. The 64-bit stream id packs a domain tag into the top byte and
//! an index (coalition bitmask, permutation number, ...) into the low 56 bits,
//! so a draw depends only on `(seed, domain, index, position)` and never on
//! how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the independent uses of one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    /// Repeated value-function draws for one coalition.
    Coalition = 1,
    /// Player permutation plus the noise draws along it.
    Permutation = 2,
    /// Synthetic regression data.
    Dataset = 3,
    /// Draws for Monte-Carlo checks of analytic distributions.
    Mixture = 4,
    /// Free for callers; used by tests and experiment drivers.
    User = 5,
}

const INDEX_BITS: u32 = 56;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Stream `index` of `domain` under `seed`.
///
/// Indices wrap modulo 2^56.
pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key_from_seed(seed));
    let index = index & ((1u64 << INDEX_BITS) - 1);
    rng.set_stream(((domain as u64) << INDEX_BITS) | index);
    rng
}
