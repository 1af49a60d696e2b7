//! Counter-based random streams.
//!
//! Every run is driven by one 64-bit root seed. Named sub-streams (`"noise"`,
//! `"directions"`, ...) are derived from it, and each draw inside a stream is
//! addressed by a counter, so the value of draw `c` never depends on the order
//! in which draws are requested. This is what lets the probes of a gradient
//! estimate be evaluated concurrently and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator handed out for a single counter slot.
pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    key: u64,
}

impl RngStream {
    pub fn root(seed: u64) -> Self {
        Self {
            key: splitmix(seed ^ 0x6a09_e667_f3bc_c908),
        }
    }

    /// Independent sub-stream identified by a name.
    pub fn named(&self, name: &str) -> Self {
        // FNV-1a over the name, then mixed with the parent key.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Self {
            key: splitmix(self.key ^ splitmix(h)),
        }
    }

    /// Independent sub-stream identified by an index (replicates, seeds).
    pub fn child(&self, index: u64) -> Self {
        Self {
            key: splitmix(
                self.key
                    .wrapping_add(splitmix(index ^ 0x3c6e_f372_fe94_f82b)),
            ),
        }
    }

    /// Generator for draw slot `counter` of this stream.
    pub fn rng(&self, counter: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(counter);
        rng
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
