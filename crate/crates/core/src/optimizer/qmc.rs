//! Scrambled Halton sequence for space-filling initial designs.

use rand::seq::SliceRandom;

use crate::rng::{stream_rng, Stream};

fn first_primes(count: usize) -> Vec<u32> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u32;
    while primes.len() < count {
        if primes.iter().take_while(|&&p| p * p <= candidate).all(|&p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Halton points with an independent random digit permutation per
/// dimension and digit position.
#[derive(Debug, Clone)]
pub struct ScrambledHalton {
    bases: Vec<u32>,
    // perms[dim][position][digit]
    perms: Vec<Vec<Vec<u32>>>,
}

impl ScrambledHalton {
    pub fn new(dim: usize, seed: u64) -> Self {
        let bases = first_primes(dim);
        let mut rng = stream_rng(seed, Stream::Scramble, 0);
        let perms = bases
            .iter()
            .map(|&b| {
                let digits = (53.0 * std::f64::consts::LN_2 / (b as f64).ln()).ceil() as usize;
                (0..digits)
                    .map(|_| {
                        let mut p: Vec<u32> = (0..b).collect();
                        p.shuffle(&mut rng);
                        p
                    })
                    .collect()
            })
            .collect();
        Self { bases, perms }
    }

    pub fn dimension(&self) -> usize {
        self.bases.len()
    }

    /// The `index`-th point, each coordinate in `[0, 1)`.
    pub fn point(&self, index: u64) -> Vec<f64> {
        self.bases
            .iter()
            .zip(&self.perms)
            .map(|(&b, perms)| {
                let base = b as u64;
                let inv = 1.0 / b as f64;
                let mut rest = index;
                let mut scale = inv;
                let mut value = 0.0;
                for perm in perms {
                    let digit = (rest % base) as usize;
                    rest /= base;
                    value += perm[digit] as f64 * scale;
                    scale *= inv;
                }
                value.min(1.0 - f64::EPSILON)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primes() {
        assert_eq!(first_primes(6), vec![2, 3, 5, 7, 11, 13]);
        assert_eq!(first_primes(100)[99], 541);
    }

    #[test]
    fn points_are_distinct_and_in_unit_cube() {
        let h = ScrambledHalton::new(5, 3);
        let pts: Vec<Vec<f64>> = (0..64).map(|i| h.point(i)).collect();
        for (i, p) in pts.iter().enumerate() {
            assert!(p.iter().all(|&v| (0.0..1.0).contains(&v)));
            for q in &pts[..i] {
                assert_ne!(p, q);
            }
        }
    }

    #[test]
    fn stratifies_first_dimension() {
        // Base-2 coordinate of the first 2^k points hits every dyadic cell once.
        let h = ScrambledHalton::new(1, 9);
        let mut cells = [0usize; 16];
        for i in 0..16 {
            cells[(h.point(i)[0] * 16.0) as usize] += 1;
        }
        assert!(cells.iter().all(|&c| c == 1));
    }

    #[test]
    fn deterministic_for_seed() {
        assert_eq!(ScrambledHalton::new(3, 1).point(7), ScrambledHalton::new(3, 1).point(7));
        assert_ne!(ScrambledHalton::new(3, 1).point(7), ScrambledHalton::new(3, 2).point(7));
    }
}
