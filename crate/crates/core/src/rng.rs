//! Counter-based random numbers (Philox4x32-10).
//!
//! Every draw is a pure function of `(seed, purpose, particle, step, block)`,
//! so results do not depend on how work is split across threads. Streams for
//! distinct `(particle, step)` pairs never share a counter as long as both
//! indices stay below `2^32`.

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 bijection with 10 rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, c[0]);
        let (hi1, lo1) = mulhilo(M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// What a stream of draws is used for; part of the counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    Initial = 1,
    Noise = 2,
    Component = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: [u32; 2],
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { key: [seed as u32, (seed >> 32) as u32] }
    }

    #[inline]
    pub fn block(&self, purpose: Purpose, particle: u64, step: u64, block: u32) -> [u32; 4] {
        debug_assert!(particle < (1 << 32) && step < (1 << 32));
        philox4x32_10([particle as u32, step as u32, purpose as u32, block], self.key)
    }

    /// Two uniforms in `(0, 1]` with 53-bit resolution.
    #[inline]
    pub fn uniforms(&self, purpose: Purpose, particle: u64, step: u64, block: u32) -> [f64; 2] {
        let b = self.block(purpose, particle, step, block);
        let a = ((b[0] as u64) << 32) | b[1] as u64;
        let c = ((b[2] as u64) << 32) | b[3] as u64;
        [to_unit(a), to_unit(c)]
    }

    /// Fill `out` with independent standard normals (Box-Muller).
    pub fn normals(&self, purpose: Purpose, particle: u64, step: u64, out: &mut [f64]) {
        let mut block = 0u32;
        let mut i = 0;
        while i < out.len() {
            let [u1, u2] = self.uniforms(purpose, particle, step, block);
            let r = (-2.0 * u1.ln()).sqrt();
            let th = std::f64::consts::TAU * u2;
            out[i] = r * th.cos();
            if i + 1 < out.len() {
                out[i + 1] = r * th.sin();
            }
            i += 2;
            block += 1;
        }
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// SplitMix64 finalizer, used to derive independent seeds from a master seed.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `rep` of a sweep point `tag` under `master`.
pub fn derive_seed(master: u64, tag: u64, rep: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(tag)) ^ rep)
}
