//! Derivation of per-task RNG seeds from a master seed.
//!
//! Rollouts, evaluation episodes, and dataset collection each own an
//! independent `ChaCha8Rng` seeded through `derive_seed`, so parallel and
//! serial execution orders produce identical results.

/// splitmix64 mixing step. Not cryptographic; used only to decorrelate
/// derived seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from `(master, stream, index)`.
///
/// The same triple always yields the same seed; distinct triples yield
/// decorrelated seeds.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let a = splitmix64(master ^ splitmix64(stream));
    splitmix64(a ^ splitmix64(index))
}
