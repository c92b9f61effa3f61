//! Counter-based random streams.
//!
//! Output `n` of a stream is `mix(seed + (n + 1) * GOLDEN)`, the SplitMix64
//! finalizer applied to a Weyl sequence. Because each draw depends only on
//! `(seed, counter)`, streams can be split by hashing a label into a new seed
//! and the children are independent of the order in which they are consumed.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::Grid;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// FNV-1a, only used to turn labels into 64-bit keys.
fn hash_label(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomStream {
    seed: u64,
    counter: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn at(seed: u64, counter: u64) -> Self {
        Self { seed, counter }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Child stream keyed by `label`; does not advance `self`.
    pub fn child(&self, label: &str) -> Self {
        Self::new(mix64(self.seed ^ mix64(hash_label(label).wrapping_add(GOLDEN))))
    }

    /// Child stream keyed by `(label, index)`; does not advance `self`.
    pub fn child_indexed(&self, label: &str, index: u64) -> Self {
        let c = self.child(label);
        Self::new(mix64(c.seed ^ mix64(index.wrapping_mul(GOLDEN).wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on `(0, 1]`.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + (hi - lo) * u
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift; bias is below 2^-64 * n.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Pair of independent standard normals (Box-Muller); consumes two draws.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_open01();
        let u2 = self.next_open01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    pub fn normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let (a, b) = self.normal_pair();
            out.push(a);
            out.push(b);
        }
        out.truncate(n);
        out
    }
}

/// I.i.d. standard normal grid. Consumes `2 * ceil(h * w / 2)` draws.
pub fn gaussian_field(rng: &mut RandomStream, h: usize, w: usize) -> Result<Grid> {
    let n = h.saturating_mul(w);
    Grid::new(h, w, rng.normals(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_first_outputs() {
        // SplitMix64 reference values for seed 0.
        let mut r = RandomStream::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn same_state_same_field() {
        let a = gaussian_field(&mut RandomStream::at(7, 0), 9, 5).unwrap();
        let b = gaussian_field(&mut RandomStream::at(7, 0), 9, 5).unwrap();
        assert_eq!(a, b);
        let c = gaussian_field(&mut RandomStream::at(8, 0), 9, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn field_consumes_fixed_draws() {
        let mut r = RandomStream::new(7);
        gaussian_field(&mut r, 3, 3).unwrap();
        assert_eq!(r.counter(), 10);
        gaussian_field(&mut r, 2, 2).unwrap();
        assert_eq!(r.counter(), 14);
    }

    #[test]
    fn moments_of_large_field() {
        let g = gaussian_field(&mut RandomStream::at(7, 0), 64, 64).unwrap();
        let n = g.len() as f64;
        let mean = g.mean();
        let var = g.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn children_do_not_depend_on_parent_progress() {
        let root = RandomStream::new(42);
        let mut advanced = root;
        advanced.next_u64();
        // Splitting uses only the seed.
        assert_eq!(root.child("trial"), advanced.child("trial"));
        assert_ne!(root.child("a"), root.child("b"));
        assert_ne!(root.child_indexed("t", 0), root.child_indexed("t", 1));

        let draw = |s: RandomStream| {
            let mut s = s;
            s.next_u64()
        };
        let a_first = (draw(root.child("a")), draw(root.child("b")));
        let b_first = {
            let b = draw(root.child("b"));
            (draw(root.child("a")), b)
        };
        assert_eq!(a_first, b_first);
    }

    #[test]
    fn below_in_range() {
        let mut r = RandomStream::new(1);
        for n in 1..50u64 {
            assert!(r.below(n) < n);
        }
    }
}
