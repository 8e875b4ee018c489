use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use crate::alg1::{run_algorithm1, Alg1Options};
use crate::alg2::{learner_input_known_g, run_algorithm2, Alg2Init};
use crate::basis::WuMap;
use crate::error::{Error, Result, StageExt};
use crate::forward::{
    forward_solve, max_policy_deviation, solve_riccati, CostSpec, ForwardOptions,
    GainModel, PolicyDistance, ValuePolicyPair,
};
use crate::hjb::HistoryStack;
use crate::linalg::derive_seed;
use crate::sgd::{write_diagnostics_csv, CostEstimate, DiagnosticRow};
use crate::sim::{add_measurement_noise, simulate, ControlLaw, DynamicalSystem, Trajectory};

const NOISE_STREAM: u64 = 0x0153;
const INIT_STREAM: u64 = 0x1417;

/// Files written by [`run_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub expert: PathBuf,
    pub diagnostics: PathBuf,
    pub stack: PathBuf,
    pub report: PathBuf,
    pub plot_script: PathBuf,
}

impl ArtifactPaths {
    pub fn in_dir(dir: &Path) -> Self {
        ArtifactPaths {
            expert: dir.join("expert.csv"),
            diagnostics: dir.join("diagnostics.csv"),
            stack: dir.join("stack.csv"),
            report: dir.join("report.json"),
            plot_script: dir.join("plot_diagnostics.py"),
        }
    }
}

/// Policy induced by the recovered cost compared against the expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub k: DMatrix<f64>,
    pub distance: PolicyDistance,
    /// `riccati` for linear systems, `forward` otherwise.
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub system: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub converged: bool,
    pub q_psd: bool,
    pub restarts: usize,
    pub iterations: usize,
    pub final_e: f64,
    pub estimate: CostEstimate,
    pub expert_gain: DMatrix<f64>,
    /// Deviation of the learner's own policy from the expert on the verification grid.
    pub learner_deviation: f64,
    pub verification: Option<Verification>,
    pub verification_error: Option<String>,
    pub wall_clock_s: f64,
    pub version: String,
    pub artifacts: ArtifactPaths,
}

impl RunReport {
    pub fn success(&self) -> bool {
        self.converged && self.q_psd && self.verification.is_some()
    }
}

/// Expert gain over `sigma_u`: explicit in the config, Riccati for linear
/// systems, otherwise a forward solve of the expert cost.
pub fn expert_gain(cfg: &ExperimentConfig, sys: &DynamicalSystem) -> Result<DMatrix<f64>> {
    if let Some(k) = &cfg.expert.gain {
        return Ok(k.clone());
    }
    policy_for_cost(cfg, sys, &cfg.expert.cost).map(|(k, _)| k)
}

fn policy_for_cost(cfg: &ExperimentConfig, sys: &DynamicalSystem, cost: &CostSpec) -> Result<(DMatrix<f64>, String)> {
    if let Some((a, b)) = sys.linear_matrices() {
        if cfg.basis.sigma_u.linear_terms(sys.state_dim()).is_some() {
            let sol = solve_riccati(&a, &b, &cost.quadratic_part(&cfg.basis), &cost.r)?;
            return Ok((gain_in_basis(&sol.k, cfg, sys)?, "riccati".into()));
        }
    }
    let opts = verification_forward_options(cfg, sys);
    let pair = forward_solve(sys, cost, &cfg.basis, &opts)?;
    Ok((pair.k, "forward".into()))
}

/// Maps a state-feedback gain `u = -K x` onto the linear terms of `sigma_u`.
fn gain_in_basis(k: &DMatrix<f64>, cfg: &ExperimentConfig, sys: &DynamicalSystem) -> Result<DMatrix<f64>> {
    let terms = cfg
        .basis
        .sigma_u
        .linear_terms(sys.state_dim())
        .ok_or_else(|| Error::param("sigma_u", "linear systems need a linear policy basis"))?;
    let mut out = DMatrix::zeros(k.nrows(), cfg.basis.l_u());
    for (state, (idx, coeff)) in terms.into_iter().enumerate() {
        for r in 0..k.nrows() {
            out[(r, idx)] = k[(r, state)] / coeff;
        }
    }
    Ok(out)
}

fn verification_forward_options(cfg: &ExperimentConfig, sys: &DynamicalSystem) -> ForwardOptions {
    let mut opts = cfg.forward.clone();
    opts.gain_model = if sys.input_weights().is_some() {
        GainModel::FromValue
    } else {
        GainModel::Free
    };
    opts
}

/// Clean expert demonstration: the recorded file when configured, else a
/// simulation under the expert gain.
pub fn expert_trajectory(cfg: &ExperimentConfig, sys: &DynamicalSystem, k: &DMatrix<f64>) -> Result<Trajectory> {
    if let Some(path) = &cfg.expert.trajectory {
        let traj = Trajectory::read_csv(path)?;
        if traj.state_dim() != sys.state_dim() || traj.input_dim() != sys.input_dim() {
            return Err(Error::Format {
                path: path.clone(),
                message: format!(
                    "trajectory has {} states and {} inputs, system needs {} and {}",
                    traj.state_dim(),
                    traj.input_dim(),
                    sys.state_dim(),
                    sys.input_dim()
                ),
            });
        }
        return Ok(traj);
    }
    let law = ControlLaw::gain(k.clone(), cfg.basis.sigma_u.clone());
    let mut traj = simulate(sys, &law, &cfg.expert.x0, cfg.expert.dt, cfg.expert.duration)?;
    traj.meta.seed = Some(cfg.seed);
    Ok(traj)
}

/// Solves for the policy of `estimate` and compares it with the expert gain.
pub fn verify_estimate(
    cfg: &ExperimentConfig,
    sys: &DynamicalSystem,
    estimate: &CostEstimate,
    expert_k: &DMatrix<f64>,
) -> Result<Verification> {
    let cost = estimate.cost()?;
    let (k, method) = policy_for_cost(cfg, sys, &cost)?;
    let grid = sys.domain().grid_with_budget(cfg.verify_points);
    let distance = crate::forward::policy_distance(&k, expert_k, &cfg.basis.sigma_u, &grid)?;
    Ok(Verification { k, distance, method })
}

/// Outcome of one estimation on a given expert trajectory.
pub(crate) struct Estimation {
    pub estimate: CostEstimate,
    pub diagnostics: Vec<DiagnosticRow>,
    pub stack: HistoryStack,
    pub converged: bool,
    pub q_psd: bool,
    pub restarts: usize,
    pub final_e: f64,
    pub learner_deviation: f64,
}

/// Runs the configured estimator against `expert` using the learner model
/// perturbed by `uncertainty`.
pub(crate) fn estimate(
    cfg: &ExperimentConfig,
    sys: &DynamicalSystem,
    expert: &Trajectory,
    expert_k: &DMatrix<f64>,
    uncertainty: f64,
    seed: u64,
) -> Result<Estimation> {
    let learner = sys.perturb_input_dynamics(uncertainty).stage("learner model")?;
    let grid = sys.domain().grid_with_budget(cfg.verify_points);
    let basis = &cfg.basis;
    let expert_u = |x: &DVector<f64>| -(expert_k * basis.sigma_u.eval(x));
    match cfg.algorithm {
        Algorithm::Alg1 => {
            let map = WuMap::build(basis, learner.domain()).stage("policy basis")?;
            let mut opts = Alg1Options {
                sgd: cfg.sgd.clone(),
                forward: cfg.forward.clone(),
                q_source: cfg.q_source,
                enrichment: cfg.enrichment.clone(),
            };
            opts.sgd.seed = seed;
            opts.forward.seed = seed;
            let res = run_algorithm1(expert, &cfg.init, &learner, basis, &map, &opts).stage("estimator")?;
            let k = &res.state.k;
            let learner_deviation = max_policy_deviation(&grid, |x| -(k * basis.sigma_u.eval(x)), expert_u)?;
            Ok(Estimation {
                estimate: res.estimate,
                diagnostics: res.diagnostics,
                stack: res.stack,
                converged: res.converged,
                q_psd: res.q_psd,
                restarts: res.restarts,
                final_e: res.final_e,
                learner_deviation,
            })
        }
        Algorithm::Alg2 => {
            let init = match &cfg.alg2_init {
                Some(init) => init.clone(),
                None => Alg2Init::random(basis, learner.domain(), learner.input_dim(), derive_seed(seed, INIT_STREAM))?,
            };
            let mut opts = cfg.sgd.clone();
            opts.seed = seed;
            let res = run_algorithm2(expert, &learner, learner.domain(), &init, basis, &opts).stage("estimator")?;
            let (r, w_v) = (&res.state.r, &res.state.w_v);
            let mut learner_deviation: f64 = 0.0;
            for x in &grid {
                let diff = learner_input_known_g(r, w_v, &learner, basis, x)? - expert_u(x);
                learner_deviation = learner_deviation.max(diff.amax());
            }
            Ok(Estimation {
                estimate: res.estimate,
                diagnostics: res.diagnostics,
                stack: res.stack,
                converged: res.converged,
                q_psd: res.q_psd,
                restarts: res.restarts,
                final_e: res.final_e,
                learner_deviation,
            })
        }
    }
}

/// Expert, estimator and verification for one config; writes all artifacts to `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    let paths = ArtifactPaths::in_dir(out);
    let sys = cfg.build_system()?;
    let expert_k = expert_gain(cfg, &sys).stage("expert policy")?;
    let clean = expert_trajectory(cfg, &sys, &expert_k).stage("expert trajectory")?;
    let expert = if cfg.noise.pct > 0.0 {
        add_measurement_noise(&clean, cfg.noise.pct, derive_seed(cfg.seed, NOISE_STREAM))?
    } else {
        clean
    };
    expert.write_csv(&paths.expert)?;

    let est = estimate(cfg, &sys, &expert, &expert_k, cfg.noise.uncertainty, cfg.seed)?;
    write_diagnostics_csv(&est.diagnostics, &paths.diagnostics, cfg.algorithm == Algorithm::Alg1)?;
    est.stack.write_csv(&paths.stack)?;
    write_plot_script(&paths.plot_script, &paths.diagnostics)?;

    let (verification, verification_error) = match verify_estimate(cfg, &sys, &est.estimate, &expert_k) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = RunReport {
        system: cfg.system.clone(),
        algorithm: cfg.algorithm,
        seed: cfg.seed,
        converged: est.converged,
        q_psd: est.q_psd,
        restarts: est.restarts,
        iterations: est.diagnostics.len(),
        final_e: est.final_e,
        estimate: est.estimate,
        expert_gain: expert_k,
        learner_deviation: est.learner_deviation,
        verification,
        verification_error,
        wall_clock_s: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        artifacts: paths.clone(),
    };
    std::fs::write(&paths.report, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Emits a matplotlib script plotting the diagnostics CSV.
pub fn write_plot_script(path: &Path, diagnostics: &Path) -> Result<()> {
    let csv_name = diagnostics
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "diagnostics.csv".into());
    let script = format!(
        r#"import csv
import os
import sys

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
path = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "{csv_name}")
with open(path) as fh:
    rows = list(csv.DictReader(fh))
k = [int(r["k"]) for r in rows]
cols = [c for c in ("E", "normK", "normWV", "minEigR") if rows and c in rows[0]]
fig, axes = plt.subplots(len(cols), 1, sharex=True, figsize=(7, 2.2 * len(cols)))
for ax, c in zip(axes, cols):
    ax.plot(k, [float(r[c]) for r in rows])
    ax.set_ylabel(c)
    if c == "E":
        ax.set_yscale("log")
axes[-1].set_xlabel("iteration")
fig.tight_layout()
fig.savefig(os.path.splitext(path)[0] + ".png", dpi=120)
"#
    );
    std::fs::write(path, script)?;
    Ok(())
}

/// Writes the (possibly noisy) expert demonstration and returns its path.
pub fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let sys = cfg.build_system()?;
    let k = expert_gain(cfg, &sys).stage("expert policy")?;
    let mut traj = expert_trajectory(cfg, &sys, &k).stage("expert trajectory")?;
    if cfg.noise.pct > 0.0 {
        traj = add_measurement_noise(&traj, cfg.noise.pct, derive_seed(cfg.seed, NOISE_STREAM))?;
    }
    let path = ArtifactPaths::in_dir(out).expert;
    traj.write_csv(&path)?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardReport {
    pub pair: ValuePolicyPair,
    /// Riccati gain for linear systems, else the configured expert gain.
    pub reference: Option<DMatrix<f64>>,
    pub distance: Option<PolicyDistance>,
}

/// Forward-solves the expert cost with the configured options and compares
/// with an independent reference when one exists.
pub fn run_forward(cfg: &ExperimentConfig, out: &Path) -> Result<ForwardReport> {
    std::fs::create_dir_all(out)?;
    let sys = cfg.build_system()?;
    let pair = forward_solve(&sys, &cfg.expert.cost, &cfg.basis, &cfg.forward).stage("forward solve")?;
    let reference = match (&cfg.expert.gain, sys.linear_matrices()) {
        (Some(k), _) => Some(k.clone()),
        (None, Some(_)) => Some(policy_for_cost(cfg, &sys, &cfg.expert.cost)?.0),
        (None, None) => None,
    };
    let distance = match &reference {
        Some(k) => {
            let grid = sys.domain().grid_with_budget(cfg.verify_points);
            Some(crate::forward::policy_distance(&pair.k, k, &cfg.basis.sigma_u, &grid)?)
        }
        None => None,
    };
    let report = ForwardReport {
        pair,
        reference,
        distance,
    };
    std::fs::write(out.join("forward.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Reads a cost from either a bare estimate JSON or a full run report.
pub fn read_cost_estimate(path: &Path) -> Result<CostEstimate> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let inner = value.get("estimate").cloned().unwrap_or(value);
    serde_json::from_value(inner).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_run_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Cost file to policy to distance against the configured expert.
pub fn run_verify(cfg: &ExperimentConfig, cost: &Path, out: &Path) -> Result<Verification> {
    std::fs::create_dir_all(out)?;
    let estimate = read_cost_estimate(cost)?;
    let sys = cfg.build_system()?;
    let expert_k = expert_gain(cfg, &sys).stage("expert policy")?;
    let v = verify_estimate(cfg, &sys, &estimate, &expert_k).stage("verification")?;
    std::fs::write(out.join("verification.json"), serde_json::to_string_pretty(&v)?)?;
    Ok(v)
}
