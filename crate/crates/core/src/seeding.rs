//! Deterministic RNG substreams. A single master seed fans out into named,
//! indexed streams (parameter init, synthetic weather, restart k, ...) so
//! that consumers never share or perturb each other's random sequences.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a 64-bit hash; stable by definition, used for stream labels.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// RNG for the substream `(name, index)` of `master`. Streams with distinct
/// names or indices are independent; the same triple always yields the same
/// sequence.
pub fn substream(master: u64, name: &str, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master);
    let stream = fnv1a(name.as_bytes()).wrapping_add(index.wrapping_mul(0x9e3779b97f4a7c15));
    rng.set_stream(stream);
    rng
}
