//! Sums of sinusoids used as probing and enriching inputs.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency_hz * t + self.phase).sin()
    }
}

/// One list of sinusoids per input channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multisine {
    pub channels: Vec<Vec<Sinusoid>>,
    pub seed: u64,
}

/// Enriching signal `u_p(t)` added to the learner's policy.
pub type EnrichmentSignal = Multisine;

impl Multisine {
    pub fn zero(channels: usize) -> Self {
        Multisine {
            channels: vec![Vec::new(); channels],
            seed: 0,
        }
    }

    /// `count` sinusoids per channel with log-spaced, randomly jittered
    /// frequencies in `[f_lo, f_hi]` and random phases. Each channel's
    /// amplitudes sum to `amplitude[c]`, so `|u_p,c(t)| <= amplitude[c]`.
    pub fn log_spaced(
        amplitude: &[f64],
        count: usize,
        f_lo: f64,
        f_hi: f64,
        seed: u64,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::param("count", "need at least one sinusoid"));
        }
        if !(f_lo > 0.0 && f_hi > f_lo) {
            return Err(Error::param("frequency", "need 0 < f_lo < f_hi"));
        }
        if amplitude.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::param("amplitude", "must be finite and non-negative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ratio = (f_hi / f_lo).ln();
        let channels = amplitude
            .iter()
            .map(|&amp| {
                (0..count)
                    .map(|i| {
                        let slot = if count == 1 {
                            0.5
                        } else {
                            (i as f64 + rng.random_range(-0.3..0.3)) / (count - 1) as f64
                        };
                        Sinusoid {
                            amplitude: amp / count as f64,
                            frequency_hz: f_lo * (ratio * slot.clamp(0.0, 1.0)).exp(),
                            phase: rng.random_range(0.0..2.0 * PI),
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Multisine { channels, seed })
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(|ch| ch.iter().map(|s| s.eval(t)).sum::<f64>()),
        )
    }

    /// Per-channel bound `sum |a_i|`.
    pub fn bound(&self) -> Vec<f64> {
        self.channels
            .iter()
            .map(|ch| ch.iter().map(|s| s.amplitude.abs()).sum())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.channels.iter().all(|ch| ch.iter().all(|s| s.amplitude == 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn respects_amplitude_bound() {
        let s = Multisine::log_spaced(&[0.3, 1.2], 6, 0.2, 8.0, 4).unwrap();
        assert_eq!(s.bound(), vec![0.3, 1.2]);
        for k in 0..5000 {
            let u = s.eval(k as f64 * 1e-3);
            assert!(u[0].abs() <= 0.3 + 1e-12 && u[1].abs() <= 1.2 + 1e-12);
        }
        for ch in &s.channels {
            assert!(ch.iter().all(|c| (0.2..=8.0).contains(&c.frequency_hz)));
        }
    }

    #[test]
    fn seeded_construction_is_reproducible() {
        let a = Multisine::log_spaced(&[1.0], 8, 0.1, 10.0, 7).unwrap();
        assert_eq!(a, Multisine::log_spaced(&[1.0], 8, 0.1, 10.0, 7).unwrap());
        assert_ne!(a, Multisine::log_spaced(&[1.0], 8, 0.1, 10.0, 8).unwrap());
    }

    #[test]
    fn zero_signal() {
        let z = Multisine::zero(3);
        assert!(z.is_zero());
        assert_eq!(z.eval(1.3), DVector::zeros(3));
    }
}
