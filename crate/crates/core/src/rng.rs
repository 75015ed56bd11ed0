//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 key derived from `(seed, domain, slot)` plus a
//! 64-bit stream id, so any draw can be regenerated from its coordinates
//! alone. Results never depend on scheduling or on how many other streams
//! were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent families of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    /// Regime holding times and window-end increments, one stream per path.
    PathSequence = 1,
    /// Bridge midpoints inside a trading window, positioned by tree node.
    BridgeNode = 2,
    /// Parameter draws for randomized sweeps, one stream per draw.
    ParamDraw = 3,
    /// Synthetic price series.
    Series = 4,
}

fn key(seed: u64, domain: Domain, slot: u64) -> [u8; 32] {
    let mut k = [0u8; 32];
    k[..8].copy_from_slice(&seed.to_le_bytes());
    k[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    k[16..24].copy_from_slice(&slot.to_le_bytes());
    k
}

/// Stream `stream` of family `(seed, domain, slot)`, positioned at its start.
pub fn stream(seed: u64, domain: Domain, slot: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key(seed, domain, slot));
    rng.set_stream(stream);
    rng
}

/// Like [`stream`] but positioned at a 16-word block, so unrelated blocks
/// can be read in any order.
pub fn block(seed: u64, domain: Domain, slot: u64, stream_id: u64, block: u64) -> ChaCha8Rng {
    let mut rng = stream(seed, domain, slot, stream_id);
    rng.set_word_pos(u128::from(block) << 4);
    rng
}
