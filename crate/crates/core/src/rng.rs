//! Counter-keyed random streams.
//!
//! Every random event in the toolkit is addressed by the key
//! `(seed, context, replication, group, event)`. The first four words form
//! the ChaCha8 key and the event index selects the cipher stream, so the
//! mapping from key to stream is injective — no hashing, no collisions.
//! Any event is recomputable in isolation and parallel execution in any
//! order reproduces sequential results bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream contexts, kept distinct so the same user seed never aliases
/// between path sampling and estimator execution.
pub(crate) const CTX_PATHS: u64 = 0x70617468; // "path"
pub(crate) const CTX_ESTIMATOR: u64 = 0x65737469; // "esti"

/// RNG for one addressed event.
pub(crate) fn event_rng(
    seed: u64,
    ctx: u64,
    replication: u64,
    group: u64,
    event: u64,
) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&ctx.to_le_bytes());
    key[16..24].copy_from_slice(&replication.to_le_bytes());
    key[24..32].copy_from_slice(&group.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(event);
    rng
}
