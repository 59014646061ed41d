//! Named-stream random number generation.
//!
//! Every random draw in a run descends from one 64-bit seed. A stream is
//! identified by a name (`"init"`, `"shuffle"`, `"data"`, ...) and an
//! optional index path, and maps to a distinct ChaCha stream, so adding or
//! removing draws in one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const DATA: &str = "data";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seed(pub u64);

impl Seed {
    /// Generator for the stream `name`.
    pub fn stream(self, name: &str) -> StreamRng {
        self.stream_at(name, &[])
    }

    /// Generator for the stream `name` refined by an index path, e.g.
    /// `("shuffle", [stage, epoch])`.
    pub fn stream_at(self, name: &str, path: &[u64]) -> StreamRng {
        let mut h = fnv1a(name.as_bytes());
        for &p in path {
            h = splitmix64(h ^ splitmix64(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(h);
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
