//! Philox4x32-10 counter-based generator and the normal variates drawn from it.
//!
//! Every draw is a pure function of `(seed, path, step)`, so simulations split across workers
//! reproduce the single-worker stream exactly.

use crate::math::{cos, ln, sin, sqrt, TWO_PI};

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;
const ROUNDS: usize = 10;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Philox4x32 {
    key: [u32; 2],
}

impl Philox4x32 {
    pub fn new(seed: u64) -> Self {
        Self::with_key([seed as u32, (seed >> 32) as u32])
    }

    pub fn with_key(key: [u32; 2]) -> Self {
        Self { key }
    }

    /// Encrypts one counter block.
    pub fn block(&self, counter: [u32; 4]) -> [u32; 4] {
        let mut c = counter;
        let mut k = self.key;
        for round in 0..ROUNDS {
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

    /// Two uniforms in the open interval `(0, 1)` with 52 random bits each.
    pub fn uniform_pair(&self, path: u64, step: u32, stream: u32) -> (f64, f64) {
        let r = self.block([path as u32, (path >> 32) as u32, step, stream]);
        (to_open_unit(r[0], r[1]), to_open_unit(r[2], r[3]))
    }

    /// Two independent standard normals (Box-Muller).
    pub fn normal_pair(&self, path: u64, step: u32, stream: u32) -> (f64, f64) {
        let (u1, u2) = self.uniform_pair(path, step, stream);
        let r = sqrt(-2.0 * ln(u1));
        let theta = TWO_PI * u2;
        (r * cos(theta), r * sin(theta))
    }
}

#[inline]
fn to_open_unit(hi: u32, lo: u32) -> f64 {
    // 52 bits so that the half-offset keeps the result strictly below one
    let bits = ((u64::from(hi) << 32) | u64::from(lo)) >> 12;
    (bits as f64 + 0.5) * (1.0 / 4_503_599_627_370_496.0)
}
