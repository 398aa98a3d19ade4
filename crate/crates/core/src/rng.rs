//! Seed splitting and the step-addressed normal stream used by the field.
//!
//! Every Gaussian the field consumes lives at a fixed address `(key, step)`,
//! so replaying a trajectory reproduces the same numbers regardless of how
//! work was scheduled.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;

/// Domain tags for [`split_seed`].
pub mod tag {
    pub const MODES: u64 = 0x6d6f_6465;
    pub const FIELD: u64 = 0x6669_656c;
    pub const VALIDATION: u64 = 0x7661_6c69;
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent 64-bit seed for child `index` of `master` in domain `tag`.
pub fn split_seed(master: u64, index: u64, tag: u64) -> u64 {
    let a = mix(master.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let b = mix(a ^ tag.wrapping_mul(0xd6e8_feb8_6659_fd93));
    mix(b.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Uniform in `(0, 1]` from the top 53 bits.
#[inline]
pub fn open_unit(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Uniform in `[0, 1)`.
#[inline]
pub fn unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Box-Muller pair from two raw words.
#[inline]
pub fn normal_pair(u: u64, v: u64) -> (f64, f64) {
    let r = (-2.0 * open_unit(u).ln()).sqrt();
    let (s, c) = (2.0 * std::f64::consts::PI * unit(v)).sin_cos();
    (r * c, r * s)
}

/// Fills `out` with standard normals drawn sequentially from `rng`.
pub fn fill_normals(rng: &mut impl RngCore, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (a, b) = normal_pair(rng.next_u64(), rng.next_u64());
        pair[0] = a;
        pair[1] = b;
    }
    if let [last] = chunks.into_remainder() {
        *last = normal_pair(rng.next_u64(), rng.next_u64()).0;
    }
}

/// Step-addressed source of standard normals.
///
/// The normals of step `n` are read from ChaCha8 stream `n` under `key`, so any
/// step can be regenerated on its own and calls may come in any order.
#[derive(Debug, Clone)]
pub struct NormalStream {
    key: u64,
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(key: u64) -> Self {
        NormalStream { key, rng: ChaCha8Rng::seed_from_u64(key) }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Fills `out` with the normals of `step`.
    pub fn fill(&mut self, step: u64, out: &mut [f64]) {
        self.rng.set_stream(step);
        self.rng.set_word_pos(0);
        for x in out.iter_mut() {
            *x = self.rng.sample(StandardNormal);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_seeds_differ() {
        let a = split_seed(1, 0, tag::MODES);
        assert_ne!(a, split_seed(1, 1, tag::MODES));
        assert_ne!(a, split_seed(1, 0, tag::FIELD));
        assert_ne!(a, split_seed(2, 0, tag::MODES));
        assert_eq!(a, split_seed(1, 0, tag::MODES));
    }

    #[test]
    fn stream_is_order_insensitive() {
        let mut s = NormalStream::new(7);
        let mut a3 = vec![0.0; 20];
        let mut a4 = vec![0.0; 20];
        s.fill(3, &mut a3);
        s.fill(4, &mut a4);
        let mut b4 = vec![0.0; 20];
        let mut b3 = vec![0.0; 20];
        let mut t = NormalStream::new(7);
        t.fill(4, &mut b4);
        t.fill(3, &mut b3);
        assert_eq!(a3, b3);
        assert_eq!(a4, b4);
        assert_ne!(a3, a4);
        let mut other = vec![0.0; 20];
        NormalStream::new(8).fill(3, &mut other);
        assert_ne!(a3, other);
    }

    #[test]
    fn normals_have_unit_variance() {
        let mut s = NormalStream::new(11);
        let n = 200_000;
        let mut buf = vec![0.0; n];
        for (i, chunk) in buf.chunks_mut(8).enumerate() {
            s.fill(i as u64, chunk);
        }
        let mean = buf.iter().sum::<f64>() / n as f64;
        let var = buf.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }
}
