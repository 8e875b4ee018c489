//! Cost recovery when the input dynamics `g` are known. Uses only expert
//! samples: no learner rollouts and no forward solve.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alg1::r_direction;
use crate::basis::{BasisSet, PositivityChecker};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::hjb::{accumulate_expert, estimate_wq, HistoryStack, QEstimate};
use crate::linalg::{self, derive_seed};
use crate::sgd::{
    self, guarded_step, project_r, BatchMode, CostEstimate, DiagnosticRow, SamplePool, SgdOptions, StopRule,
    MAX_HALVINGS,
};
use crate::sim::{InputMap, Trajectory};

/// Starting point of the estimator; any positive definite pair is admissible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alg2Init {
    pub r: DMatrix<f64>,
    pub w_v: DVector<f64>,
}

impl Alg2Init {
    /// Random quadratic value weights and `R = I`.
    pub fn random(basis: &BasisSet, domain: &Domain, m: usize, seed: u64) -> Result<Self> {
        Ok(Alg2Init {
            r: DMatrix::identity(m, m),
            w_v: sgd::random_value_weights(&basis.sigma_v, domain, seed)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alg2State {
    pub r: DMatrix<f64>,
    pub w_v: DVector<f64>,
    pub iteration: usize,
    pub recent_e: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Alg2Result {
    pub state: Alg2State,
    pub estimate: CostEstimate,
    pub diagnostics: Vec<DiagnosticRow>,
    pub converged: bool,
    pub q_psd: bool,
    pub restarts: usize,
    pub final_e: f64,
    pub q: QEstimate,
    pub stack: HistoryStack,
}

impl Alg2Result {
    pub fn success(&self) -> bool {
        self.converged && self.q_psd
    }
}

/// `grad sigma_V(x) g(x)`, an `L_V x m` matrix.
fn value_input_coupling(basis: &BasisSet, g: &dyn InputMap, x: &DVector<f64>) -> DMatrix<f64> {
    basis.sigma_v.jacobian(x) * g.input_map(x)
}

/// `u_l = -1/2 R^-1 g(x)^T grad sigma_V(x)^T W_V`.
pub fn learner_input_known_g(
    r: &DMatrix<f64>,
    w_v: &DVector<f64>,
    g: &dyn InputMap,
    basis: &BasisSet,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r_inv = linalg::spd_inverse(r, "R")?;
    Ok(-(r_inv * value_input_coupling(basis, g, x).transpose() * w_v) * 0.5)
}

/// `grad sigma_V(x) g(x) R^-1 E_u`.
pub fn wv_direction_known_g(
    r: &DMatrix<f64>,
    g: &dyn InputMap,
    basis: &BasisSet,
    e: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r_inv = linalg::spd_inverse(r, "R")?;
    Ok(value_input_coupling(basis, g, x) * (r_inv * e))
}

/// Guarded step along [`wv_direction_known_g`].
#[allow(clippy::too_many_arguments)]
pub fn update_wv_known_g(
    w_v: &DVector<f64>,
    g: &dyn InputMap,
    r: &DMatrix<f64>,
    e: &DVector<f64>,
    x: &DVector<f64>,
    alpha_v: f64,
    basis: &BasisSet,
    checker: &PositivityChecker,
) -> Result<DVector<f64>> {
    let dir = wv_direction_known_g(r, g, basis, e, x)?;
    guarded_step(w_v, &dir, alpha_v, checker).ok_or(Error::NotPositive("value function after step halving"))
}

struct Loop<'a> {
    pool: &'a SamplePool,
    coupling: Vec<DMatrix<f64>>,
    checker: &'a PositivityChecker,
    opts: &'a SgdOptions,
}

#[derive(Clone)]
struct Iterate {
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    w_v: DVector<f64>,
}

impl Iterate {
    fn new(r: DMatrix<f64>, w_v: DVector<f64>) -> Result<Self> {
        let r_inv = linalg::spd_inverse(&r, "R")?;
        Ok(Iterate { r, r_inv, w_v })
    }
}

impl Loop<'_> {
    fn error(&self, it: &Iterate, i: usize) -> (DVector<f64>, DVector<f64>) {
        let u_l = -(&it.r_inv * self.coupling[i].transpose() * &it.w_v) * 0.5;
        let e = &u_l - &self.pool.inputs[i];
        (u_l, e)
    }

    fn eval_distance(&self, it: &Iterate) -> f64 {
        self.pool.eval.iter().map(|&i| self.error(it, i).1.norm_squared()).sum()
    }

    fn step(&self, it: &Iterate, dir_r: &DMatrix<f64>, dir_v: &DVector<f64>, scale: f64) -> Result<Option<Iterate>> {
        let r = if self.opts.fix_r {
            it.r.clone()
        } else {
            project_r(&(&it.r + dir_r * (self.opts.alpha_r * scale)))
        };
        match guarded_step(&it.w_v, dir_v, self.opts.alpha_v * scale, self.checker) {
            Some(w_v) => Ok(Some(Iterate::new(r, w_v)?)),
            None => Ok(None),
        }
    }

    fn stochastic(&self, it: Iterate, rng: &mut ChaCha8Rng) -> Result<Iterate> {
        let i = self.pool.draw(rng);
        let (u_l, e) = self.error(&it, i);
        let dir_r = r_direction(&it.r, &u_l, &e)?;
        let dir_v = &self.coupling[i] * (&it.r_inv * &e);
        match self.step(&it, &dir_r, &dir_v, 1.0)? {
            Some(next) => Ok(next),
            None if self.opts.fix_r => Ok(it),
            None => Iterate::new(project_r(&(&it.r + dir_r * self.opts.alpha_r)), it.w_v),
        }
    }

    fn full_batch(&self, it: &Iterate, e_now: f64) -> Result<Option<(Iterate, f64)>> {
        let mut dir_r = DMatrix::zeros(it.r.nrows(), it.r.ncols());
        let mut dir_v = DVector::zeros(it.w_v.len());
        for &i in &self.pool.eval {
            let (u_l, e) = self.error(it, i);
            dir_r += r_direction(&it.r, &u_l, &e)?;
            dir_v += &self.coupling[i] * (&it.r_inv * &e);
        }
        let count = self.pool.eval.len().max(1) as f64;
        dir_r /= count;
        dir_v /= count;
        let mut scale = 1.0;
        for _ in 0..=2 * MAX_HALVINGS {
            if let Some(next) = self.step(it, &dir_r, &dir_v, scale)? {
                let e_next = self.eval_distance(&next);
                if e_next <= e_now {
                    return Ok(Some((next, e_next)));
                }
            }
            scale *= 0.5;
        }
        Ok(None)
    }
}

struct SgdOutcome {
    state: Alg2State,
    diagnostics: Vec<DiagnosticRow>,
    converged: bool,
    final_e: f64,
}

fn run_sgd(lp: &Loop<'_>, start: Iterate, seed: u64) -> Result<SgdOutcome> {
    let opts = lp.opts;
    let m = lp.pool.inputs[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stop = StopRule::new(opts.threshold(m), opts.window);
    let mut diagnostics = Vec::new();
    let mut it = start;
    let mut e = lp.eval_distance(&it);
    let mut best: Option<(f64, Alg2State)> = None;
    let snapshot = |it: &Iterate, k: usize, stop: &StopRule| Alg2State {
        r: it.r.clone(),
        w_v: it.w_v.clone(),
        iteration: k,
        recent_e: stop.recent(),
    };
    for k in 0..opts.max_iter {
        if !e.is_finite() {
            return Err(Error::NonFinite("policy distance"));
        }
        diagnostics.push(DiagnosticRow {
            k,
            e,
            norm_k: None,
            norm_wv: it.w_v.norm(),
            min_eig_r: linalg::min_eigenvalue_sym(&it.r),
        });
        let done = stop.push(e);
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, snapshot(&it, k, &stop)));
        }
        if done {
            return Ok(SgdOutcome {
                state: snapshot(&it, k, &stop),
                diagnostics,
                converged: true,
                final_e: e,
            });
        }
        match opts.batch_mode {
            BatchMode::Stochastic => {
                it = lp.stochastic(it, &mut rng)?;
                e = lp.eval_distance(&it);
            }
            BatchMode::FullBatch => match lp.full_batch(&it, e)? {
                Some((next, e_next)) => {
                    it = next;
                    e = e_next;
                }
                None => break,
            },
        }
    }
    let (final_e, state) = best.expect("at least one iteration recorded");
    Ok(SgdOutcome {
        state,
        diagnostics,
        converged: false,
        final_e,
    })
}

/// Gradient loop on expert samples with the known-`g` policy expression,
/// then the `Q` solve on the expert stack; restarts from a random positive
/// definite pair when `Q` is not semidefinite.
pub fn run_algorithm2(
    expert: &Trajectory,
    g: &dyn InputMap,
    domain: &Domain,
    init: &Alg2Init,
    basis: &BasisSet,
    opts: &SgdOptions,
) -> Result<Alg2Result> {
    opts.validate()?;
    let m = expert.input_dim();
    if g.input_dim() != m || init.r.nrows() != m {
        return Err(Error::Dimension {
            context: "input dimension",
            expected: m,
            actual: g.input_dim(),
        });
    }
    if g.state_dim() != basis.state_dim {
        return Err(Error::Dimension {
            context: "input map state dimension",
            expected: basis.state_dim,
            actual: g.state_dim(),
        });
    }
    let value_check = PositivityChecker::value(basis, domain, opts.positivity_samples, opts.seed);
    let cost_check = PositivityChecker::state_cost(basis, domain, opts.positivity_samples, opts.seed);
    if !value_check.check(&init.w_v).ok {
        return Err(Error::NotPositive("initial value function"));
    }
    let pool = SamplePool::new(expert, basis, opts)?;
    let lp = Loop {
        coupling: pool.states.iter().map(|x| value_input_coupling(basis, g, x)).collect(),
        pool: &pool,
        checker: &value_check,
        opts,
    };

    let mut diagnostics = Vec::new();
    let mut last: Option<Alg2Result> = None;
    for attempt in 0..=opts.max_restarts {
        let start = if attempt == 0 {
            init.clone()
        } else {
            let s = derive_seed(opts.seed, 0x5E57 + attempt as u64);
            Alg2Init {
                r: if opts.fix_r { init.r.clone() } else { sgd::random_r(m, s) },
                w_v: sgd::random_value_weights(&basis.sigma_v, domain, derive_seed(s, 2))?,
            }
        };
        let out = run_sgd(
            &lp,
            Iterate::new(start.r, start.w_v)?,
            derive_seed(opts.seed, 0xA162 + attempt as u64),
        )?;
        let offset = diagnostics.len();
        diagnostics.extend(out.diagnostics.iter().map(|d| DiagnosticRow { k: d.k + offset, ..*d }));
        let stack = accumulate_expert(expert, &out.state.r, &out.state.w_v, basis, &opts.stack)?;
        let q = estimate_wq(&stack, opts.sigma_min_threshold)?;
        let q_psd = cost_check.check(&q.w_q).ok;
        let estimate = CostEstimate {
            w_q: q.w_q.clone(),
            r: out.state.r.clone(),
            w_v: out.state.w_v.clone(),
            k: None,
        };
        last = Some(Alg2Result {
            state: out.state,
            estimate,
            diagnostics: Vec::new(),
            converged: out.converged,
            q_psd,
            restarts: attempt,
            final_e: out.final_e,
            q,
            stack,
        });
        if q_psd {
            break;
        }
    }
    let mut result = last.ok_or(Error::IterationCap("restarts", opts.max_restarts))?;
    result.diagnostics = diagnostics;
    Ok(result)
}
