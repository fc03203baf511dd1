//! Stateless keyed randomness.
//!
//! Every random quantity in the laboratory is a pure function of a 64-bit key
//! and a counter. Keys are derived by absorbing a sequence of words into a
//! SplitMix64-style mixer, so the kernel at a site, the step uniform of a walk
//! at time `t`, and the seed of replica `k` can all be recomputed in isolation
//! on any worker without replaying a sequential generator.
//!
//! Seed schedule (stable, documented so external tools can replay a replica):
//!
//! ```text
//! env seed  of replica k     = derive(master, [tag("env"), k])
//! walk seed of walk m in k   = derive(master, [tag("walk"), k, m])
//! site key                   = derive(env_seed, [tag("site"), x_1, ..., x_d])
//! step uniform at time t     = unit(splitmix(walk_seed, t))
//! ```

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a domain tag.
pub fn tag(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Absorbs `words` into `key`, producing a new independent key.
pub fn derive(key: u64, words: &[u64]) -> u64 {
    let mut state = mix64(key ^ 0x6A09_E667_F3BC_C908);
    for &w in words {
        state = mix64(state.wrapping_add(GOLDEN) ^ mix64(w.wrapping_add(GOLDEN)));
    }
    mix64(state ^ (words.len() as u64).wrapping_mul(GOLDEN))
}

/// The `counter`-th output of the SplitMix64 stream seeded with `key`.
#[inline]
pub fn splitmix(key: u64, counter: u64) -> u64 {
    mix64(key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Maps 64 random bits to a double in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Counter-based generator over a single key.
///
/// Cloning it forks the stream at the current position; two generators with
/// equal keys and counters produce identical outputs.
#[derive(Debug, Clone)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    pub fn new(key: u64) -> Self {
        StreamRng { key, counter: 0 }
    }

    pub fn at(key: u64, counter: u64) -> Self {
        StreamRng { key, counter }
    }

    pub fn next_unit(&mut self) -> f64 {
        unit(self.next_u64())
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let out = splitmix(self.key, self.counter);
        self.counter = self.counter.wrapping_add(1);
        out
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Replica-level seed derivation from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSchedule {
    master: u64,
}

impl SeedSchedule {
    pub fn new(master: u64) -> Self {
        SeedSchedule { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Environment seed of outer replica `k`.
    pub fn env(&self, k: u64) -> u64 {
        derive(self.master, &[tag("env"), k])
    }

    /// Walk seed of inner replica `m` within outer replica `k`.
    pub fn walk(&self, k: u64, m: u64) -> u64 {
        derive(self.master, &[tag("walk"), k, m])
    }

    /// Independent sub-schedule, e.g. for pilot runs or bootstrap streams.
    pub fn child(&self, name: &str) -> SeedSchedule {
        SeedSchedule::new(derive(self.master, &[tag("child"), tag(name)]))
    }

    /// A generator for auxiliary randomness (bootstrap resampling and the like).
    pub fn stream(&self, name: &str) -> StreamRng {
        StreamRng::new(derive(self.master, &[tag("stream"), tag(name)]))
    }
}

/// Key of the kernel at `site` in environment `env_seed`.
#[inline]
pub fn site_key(env_seed: u64, site: &[i64]) -> u64 {
    let mut state = mix64(env_seed ^ 0x3C6E_F372_FE94_F82B);
    for &c in site {
        state = mix64(state.wrapping_add(GOLDEN) ^ mix64((c as u64).wrapping_add(GOLDEN)));
    }
    mix64(state ^ (site.len() as u64))
}
