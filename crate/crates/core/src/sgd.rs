//! Pieces shared by both estimators: expert sampling, the stopping rule,
//! per-iteration diagnostics, restarts and the final `Q` solve.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, PositivityChecker, DEFAULT_POSITIVITY_SAMPLES};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::forward::CostSpec;
use crate::hjb::{StackOptions, DEFAULT_SIGMA_MIN};
use crate::linalg::{self, derive_seed};
use crate::sim::Trajectory;

/// Eigenvalue floor applied to `R` after every update.
pub const R_FLOOR: f64 = 1e-6;
/// Maximum number of step halvings when guarding positivity or monotonicity.
pub const MAX_HALVINGS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One expert sample per iteration.
    Stochastic,
    /// Gradient summed over the evaluation batch, with backtracking so that
    /// the distance never increases.
    FullBatch,
}

/// Options common to both estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdOptions {
    pub alpha_r: f64,
    pub alpha_v: f64,
    /// Stopping threshold on the distance; `1e-4 * m` when absent.
    pub epsilon_e: Option<f64>,
    /// Number of consecutive iterations below the threshold required to stop.
    pub window: usize,
    /// Minimum `|x|_inf` of sampled expert states, as a fraction of the trajectory peak.
    pub sample_floor: f64,
    pub max_iter: usize,
    pub max_restarts: usize,
    pub seed: u64,
    pub batch_mode: BatchMode,
    /// Keep `R` at its initial value (single-input systems).
    pub fix_r: bool,
    /// Size of the fixed evaluation batch for the distance.
    pub eval_batch: usize,
    pub stack: StackOptions,
    pub sigma_min_threshold: f64,
    pub positivity_samples: usize,
}

impl Default for SgdOptions {
    fn default() -> Self {
        SgdOptions {
            alpha_r: 1e-3,
            alpha_v: 1e-3,
            epsilon_e: None,
            window: 50,
            sample_floor: 0.05,
            max_iter: 200_000,
            max_restarts: 3,
            seed: 0,
            batch_mode: BatchMode::Stochastic,
            fix_r: false,
            eval_batch: 200,
            stack: StackOptions::default(),
            sigma_min_threshold: DEFAULT_SIGMA_MIN,
            positivity_samples: DEFAULT_POSITIVITY_SAMPLES,
        }
    }
}

impl SgdOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [("alpha_r", self.alpha_r), ("alpha_v", self.alpha_v)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if let Some(e) = self.epsilon_e {
            if !(e > 0.0) {
                return Err(Error::param("epsilon_e", "must be positive"));
            }
        }
        if self.window == 0 {
            return Err(Error::param("window", "must be at least 1"));
        }
        if self.eval_batch == 0 {
            return Err(Error::param("eval_batch", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.sample_floor) {
            return Err(Error::param("sample_floor", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn threshold(&self, m: usize) -> f64 {
        self.epsilon_e.unwrap_or(1e-4 * m as f64)
    }
}

/// Recovered cost together with the intermediaries that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub w_q: DVector<f64>,
    pub r: DMatrix<f64>,
    pub w_v: DVector<f64>,
    /// Policy gain over `sigma_u`; absent for the known-input-dynamics estimator.
    pub k: Option<DMatrix<f64>>,
}

impl CostEstimate {
    pub fn cost(&self) -> Result<CostSpec> {
        CostSpec::new(self.w_q.clone(), self.r.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub k: usize,
    pub e: f64,
    pub norm_k: Option<f64>,
    pub norm_wv: f64,
    pub min_eig_r: f64,
}

/// Writes `k,E,normK,normWV,minEigR` (the `normK` column only when present).
pub fn write_diagnostics_csv(rows: &[DiagnosticRow], path: &Path, with_gain: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    if with_gain {
        w.write_record(["k", "E", "normK", "normWV", "minEigR"])?;
    } else {
        w.write_record(["k", "E", "normWV", "minEigR"])?;
    }
    for r in rows {
        let mut rec = vec![r.k.to_string(), format!("{:.16e}", r.e)];
        if with_gain {
            rec.push(format!("{:.16e}", r.norm_k.unwrap_or(f64::NAN)));
        }
        rec.push(format!("{:.16e}", r.norm_wv));
        rec.push(format!("{:.16e}", r.min_eig_r));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_diagnostics_csv`].
pub fn read_diagnostics_csv(path: &Path) -> Result<Vec<DiagnosticRow>> {
    let fail = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let with_gain = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["k", "E", "normK", "normWV", "minEigR"] => true,
        ["k", "E", "normWV", "minEigR"] => false,
        _ => return Err(fail(format!("unexpected header {}", header.join(",")))),
    };
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| fail(format!("row {} column {} is not a number", line + 2, i + 1)))
        };
        let k = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail(format!("row {} has a bad iteration index", line + 2)))?;
        let off = usize::from(with_gain);
        rows.push(DiagnosticRow {
            k,
            e: num(1)?,
            norm_k: if with_gain { Some(num(2)?) } else { None },
            norm_wv: num(2 + off)?,
            min_eig_r: num(3 + off)?,
        });
    }
    Ok(rows)
}

/// Expert samples above the amplitude floor with precomputed basis values.
pub(crate) struct SamplePool {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub sigma_u: Vec<DVector<f64>>,
    /// Evaluation batch (indices into the pool).
    pub eval: Vec<usize>,
}

impl SamplePool {
    pub fn new(expert: &Trajectory, basis: &BasisSet, opts: &SgdOptions) -> Result<Self> {
        if expert.state_dim() != basis.state_dim {
            return Err(Error::Dimension {
                context: "expert state columns",
                expected: basis.state_dim,
                actual: expert.state_dim(),
            });
        }
        let floor = opts.sample_floor * expert.peak_state_amplitude();
        let picked: Vec<usize> = (0..expert.len())
            .filter(|&k| {
                let a = expert.state_amplitude(k);
                a > 0.0 && a >= floor
            })
            .collect();
        if picked.is_empty() {
            return Err(Error::DegenerateData(
                "no expert sample exceeds the amplitude floor".into(),
            ));
        }
        let states: Vec<DVector<f64>> = picked.iter().map(|&k| expert.state(k)).collect();
        let inputs = picked.iter().map(|&k| expert.input(k)).collect();
        let sigma_u = states.iter().map(|x| basis.sigma_u.eval(x)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 0xE7A1));
        let n = states.len();
        let eval = if opts.eval_batch >= n {
            (0..n).collect()
        } else {
            let mut idx = index::sample(&mut rng, n, opts.eval_batch).into_vec();
            idx.sort_unstable();
            idx
        };
        Ok(SamplePool {
            states,
            inputs,
            sigma_u,
            eval,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.len())
    }
}

/// Trailing-window stopping rule.
pub(crate) struct StopRule {
    threshold: f64,
    window: usize,
    recent: VecDeque<f64>,
}

impl StopRule {
    pub fn new(threshold: f64, window: usize) -> Self {
        StopRule {
            threshold,
            window,
            recent: VecDeque::with_capacity(window),
        }
    }

    /// Records a distance value; true once the last `window` values are all below threshold.
    pub fn push(&mut self, e: f64) -> bool {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(e);
        self.recent.len() == self.window && self.recent.iter().all(|&v| v < self.threshold)
    }

    pub fn recent(&self) -> Vec<f64> {
        self.recent.iter().copied().collect()
    }
}

/// Random positive semidefinite quadratic `x^T M^T M x` projected onto `sigma_Q`.
pub(crate) fn random_quadratic_weights(
    family: &crate::basis::BasisVector,
    domain: &Domain,
    seed: u64,
) -> Result<DVector<f64>> {
    let n = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let p = m.transpose() * m + DMatrix::identity(n, n) * 0.1;
    family.weights_for_quadratic(&p, domain, derive_seed(seed, 1))
}

/// Random positive definite value weights: `x^T M^T M x` when the family can
/// represent it, otherwise a random diagonal quadratic.
pub(crate) fn random_value_weights(
    family: &crate::basis::BasisVector,
    domain: &Domain,
    seed: u64,
) -> Result<DVector<f64>> {
    match random_quadratic_weights(family, domain, seed) {
        Ok(w) => Ok(w),
        Err(Error::InvalidBasis { .. }) => {
            let d = random_r(domain.dim(), derive_seed(seed, 3));
            family.weights_for_quadratic(&d, domain, derive_seed(seed, 4))
        }
        Err(e) => Err(e),
    }
}

/// Fresh random `R = diag(U[0.5, 1.5])`.
pub(crate) fn random_r(m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| rng.random_range(0.5..1.5)))
}

/// Symmetric `R` with eigenvalues floored at [`R_FLOOR`].
pub(crate) fn project_r(r: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::project_spd(r, R_FLOOR)
}

/// Attempts `w + alpha * dir`, halving the step until the value function stays
/// positive definite. Returns the accepted weights, or `None` after
/// [`MAX_HALVINGS`] failed halvings.
pub(crate) fn guarded_step(
    w: &DVector<f64>,
    dir: &DVector<f64>,
    alpha: f64,
    checker: &PositivityChecker,
) -> Option<DVector<f64>> {
    let mut step = alpha;
    for _ in 0..=MAX_HALVINGS {
        let cand = w + dir * step;
        if checker.check(&cand).ok {
            return Some(cand);
        }
        step *= 0.5;
    }
    None
}
