use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{estimate, expert_gain, expert_trajectory, verify_estimate};
use crate::error::{Error, Result, StageExt};
use crate::linalg::derive_seed;
use crate::sim::add_measurement_noise;

/// One (uncertainty, trial) outcome; `error` is `None` when the run failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCell {
    pub uncertainty: f64,
    pub trial: usize,
    /// `|K_hat - K_e|_F / |K_e|_F` of the verified policy.
    pub error: Option<f64>,
    pub failure: Option<String>,
}

/// Sweeps the configured uncertainty grid, `trials` noisy demonstrations per
/// level, in parallel. Each cell has its own derived seed so the result does
/// not depend on scheduling.
pub fn run_noise_study(cfg: &ExperimentConfig) -> Result<Vec<NoiseCell>> {
    if cfg.noise.grid.iter().any(|u| !(*u >= 0.0) || !u.is_finite()) {
        return Err(Error::param("noise.grid", "uncertainty levels must be non-negative"));
    }
    if cfg.noise.trials == 0 {
        return Err(Error::param("noise.trials", "must be at least 1"));
    }
    let sys = cfg.build_system()?;
    let expert_k = expert_gain(cfg, &sys).stage("expert policy")?;
    let clean = expert_trajectory(cfg, &sys, &expert_k).stage("expert trajectory")?;
    let cells: Vec<(usize, f64, usize)> = cfg
        .noise
        .grid
        .iter()
        .enumerate()
        .flat_map(|(i, &u)| (0..cfg.noise.trials).map(move |t| (i, u, t)))
        .collect();
    Ok(cells
        .into_par_iter()
        .map(|(level, uncertainty, trial)| {
            let seed = derive_seed(cfg.seed, (level as u64) << 32 | trial as u64);
            let outcome = (|| -> Result<f64> {
                let expert = add_measurement_noise(&clean, cfg.noise.pct, seed)?;
                let est = estimate(cfg, &sys, &expert, &expert_k, uncertainty, seed)?;
                let v = verify_estimate(cfg, &sys, &est.estimate, &expert_k)?;
                Ok(v.distance.normalized_gain_error)
            })();
            match outcome {
                Ok(e) if e.is_finite() => NoiseCell {
                    uncertainty,
                    trial,
                    error: Some(e),
                    failure: None,
                },
                Ok(e) => NoiseCell {
                    uncertainty,
                    trial,
                    error: None,
                    failure: Some(format!("non-finite error {e}")),
                },
                Err(e) => NoiseCell {
                    uncertainty,
                    trial,
                    error: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect())
}

/// `uncertainty,trial,norm_policy_error`, with `failed` in the last column
/// for cells that produced no estimate.
pub fn write_noise_csv(cells: &[NoiseCell], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(["uncertainty", "trial", "norm_policy_error"])?;
    for c in cells {
        let err = c.error.map_or_else(|| "failed".to_string(), |e| format!("{e:.10e}"));
        w.write_record([format!("{}", c.uncertainty), c.trial.to_string(), err])?;
    }
    w.flush()?;
    Ok(())
}
