use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Axis-aligned operating box.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl Domain {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension {
                context: "domain bounds",
                expected: lo.len(),
                actual: hi.len(),
            });
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
            return Err(Error::param("domain", "each lower bound must be below its upper bound"));
        }
        Ok(Domain { lo, hi })
    }

    /// The box `[-h_i, h_i]`.
    pub fn symmetric(half_widths: &[f64]) -> Self {
        let hi = DVector::from_column_slice(half_widths);
        Domain { lo: -&hi, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lo
                .iter()
                .zip(self.hi.iter())
                .map(|(l, h)| rng.random_range(*l..=*h)),
        )
    }

    /// `count` seeded samples with `|x|_inf >= exclude_radius`.
    pub fn samples(&self, count: usize, seed: u64, exclude_radius: f64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x = self.sample(&mut rng);
            if x.amax() >= exclude_radius {
                out.push(x);
            }
        }
        out
    }

    /// Tensor grid with `per_dim` points per axis (endpoints included).
    pub fn grid(&self, per_dim: usize) -> Vec<DVector<f64>> {
        let n = self.dim();
        let per_dim = per_dim.max(2);
        let total = per_dim.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                DVector::from_iterator(
                    n,
                    (0..n).map(|d| {
                        let k = idx % per_dim;
                        idx /= per_dim;
                        let frac = k as f64 / (per_dim - 1) as f64;
                        self.lo[d] + frac * (self.hi[d] - self.lo[d])
                    }),
                )
            })
            .collect()
    }

    /// A grid of roughly `budget` points, at least two per axis.
    pub fn grid_with_budget(&self, budget: usize) -> Vec<DVector<f64>> {
        let n = self.dim().max(1) as f64;
        let per_dim = ((budget as f64).powf(1.0 / n).floor() as usize).max(2);
        self.grid(per_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_corners() {
        let d = Domain::symmetric(&[2.0, 2.0]);
        let g = d.grid(5);
        assert_eq!(g.len(), 25);
        assert!(g.iter().any(|p| p[0] == 2.0 && p[1] == 2.0));
        assert!(g.iter().any(|p| p[0] == -2.0 && p[1] == -2.0));
        assert!(g.iter().all(|p| d.contains(p)));
    }

    #[test]
    fn samples_are_reproducible_and_exclude_origin_ball() {
        let d = Domain::symmetric(&[1.0, 1.0, 1.0]);
        let a = d.samples(100, 3, 1e-6);
        let b = d.samples(100, 3, 1e-6);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.amax() >= 1e-6));
    }
}
