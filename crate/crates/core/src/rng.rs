//! Seeded generator used for every sampled check.
//!
//! A thin wrapper over ChaCha8 with the sampling shapes the checks need
//! (boxes, balls, directions). The ChaCha stream is value-stable across
//! platforms, so sampled reports are byte-identical for a given seed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Vector;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream for a named sub-task.
    pub fn fork(&mut self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.next_u64());
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_in(&mut self, lo: i64, hi: i64) -> i64 {
        self.inner.random_range(lo..=hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn unit_direction(&mut self, dim: usize) -> Vector {
        loop {
            let v = Vector::from_fn(dim, |_, _| self.normal());
            let n = v.norm();
            if n > 1e-12 {
                return v / n;
            }
        }
    }

    /// Uniform sample from the closed ball of the given radius.
    pub fn in_ball(&mut self, dim: usize, radius: f64) -> Vector {
        let dir = self.unit_direction(dim);
        let r = radius * self.next_f64().powf(1.0 / dim as f64);
        dir * r
    }

    pub fn in_box(&mut self, dim: usize, half_width: f64) -> Vector {
        Vector::from_fn(dim, |_, _| self.uniform(-half_width, half_width))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_and_forks_are_reproducible() {
        let mut a = SeededRng::new(11);
        let mut b = SeededRng::new(11);
        assert_eq!(a.next_u64(), b.next_u64());
        let (mut fa, mut fb) = (a.fork(3), b.fork(3));
        assert_eq!(fa.next_u64(), fb.next_u64());
        assert_ne!(a.fork(1).next_u64(), b.fork(2).next_u64());
    }

    #[test]
    fn unit_interval_and_ball() {
        let mut rng = SeededRng::new(7);
        for _ in 0..1000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
            let p = rng.in_ball(3, 2.0);
            assert!(p.norm() <= 2.0 + 1e-12);
            let k = rng.int_in(-3, 3);
            assert!((-3..=3).contains(&k));
        }
    }
}
