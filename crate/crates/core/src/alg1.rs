//! Model-free estimation of `R` and the value weights by stochastic gradient
//! descent on the expert/learner policy mismatch, followed by the `Q` solve.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, PositivityChecker, WuMap};
use crate::error::{Error, Result};
use crate::excitation::Multisine;
use crate::forward::{forward_solve, CostSpec, ForwardOptions, GainModel, ValuePolicyPair};
use crate::hjb::{accumulate_enhanced, accumulate_expert, estimate_wq, HistoryStack, QEstimate};
use crate::linalg::{self, derive_seed, PINV_RELATIVE_TOL};
use crate::sgd::{
    self, guarded_step, project_r, BatchMode, CostEstimate, DiagnosticRow, SamplePool, SgdOptions, StopRule,
    MAX_HALVINGS,
};
use crate::sim::{simulate, ControlLaw, DynamicalSystem, Trajectory};

/// Which history stack feeds the final `Q` solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QSource {
    Expert,
    Enhanced,
    /// Expert stack when informative, otherwise the enhanced one.
    Auto,
}

/// Probing signal added to the learner for the enhanced stack.
#[derive(Clone, Debug, PartialEq)]
pub struct EnrichmentOptions {
    pub count: usize,
    pub band_hz: (f64, f64),
    /// Amplitude as a fraction of the expert's peak input per channel.
    pub fraction: f64,
    /// Rollout length; the expert duration when absent.
    pub duration: Option<f64>,
}

impl Default for EnrichmentOptions {
    fn default() -> Self {
        EnrichmentOptions {
            count: 6,
            band_hz: (0.2, 8.0),
            fraction: 0.3,
            duration: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alg1Options {
    pub sgd: SgdOptions,
    pub forward: ForwardOptions,
    pub q_source: QSource,
    pub enrichment: EnrichmentOptions,
}

impl Default for Alg1Options {
    fn default() -> Self {
        Alg1Options {
            sgd: SgdOptions::default(),
            forward: ForwardOptions {
                gain_model: GainModel::FromValue,
                ..ForwardOptions::default()
            },
            q_source: QSource::Auto,
            enrichment: EnrichmentOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alg1State {
    pub r: DMatrix<f64>,
    pub w_v: DVector<f64>,
    pub w_ul: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iteration: usize,
    pub recent_e: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Alg1Result {
    pub state: Alg1State,
    pub estimate: CostEstimate,
    pub diagnostics: Vec<DiagnosticRow>,
    /// The distance stopping rule fired (false when `max_iter` was hit).
    pub converged: bool,
    /// The recovered state cost passed the semidefiniteness check.
    pub q_psd: bool,
    pub restarts: usize,
    pub final_e: f64,
    /// Step-2 forward solution of the accepted attempt.
    pub initial: ValuePolicyPair,
    pub q: QEstimate,
    pub stack: HistoryStack,
}

impl Alg1Result {
    pub fn success(&self) -> bool {
        self.converged && self.q_psd
    }
}

/// `u_l = -K sigma_u(x)`.
pub fn learner_input(k: &DMatrix<f64>, basis: &BasisSet, x: &DVector<f64>) -> DVector<f64> {
    -(k * basis.sigma_u.eval(x))
}

/// `E_u = u_l - u_e`.
pub fn policy_error(u_l: &DVector<f64>, u_e: &DVector<f64>) -> DVector<f64> {
    u_l - u_e
}

/// Sum of squared policy errors.
pub fn distance(errors: &[DVector<f64>]) -> f64 {
    errors.iter().map(|e| e.norm_squared()).sum()
}

/// Pseudoinverse of `W_ul`, refusing when a singular value is truncated.
pub fn wul_pinv(w_ul: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, rank) = linalg::pinv(w_ul, PINV_RELATIVE_TOL);
    let required = w_ul.nrows().min(w_ul.ncols());
    if rank < required {
        return Err(Error::IllConditioned { rank, required });
    }
    Ok(p)
}

/// Descent direction for `R`: `R^-1 E u_l^T + u_l E^T R^-1`, the negative
/// gradient of `E^T E` over symmetric perturbations.
pub fn r_direction(r: &DMatrix<f64>, u_l: &DVector<f64>, e: &DVector<f64>) -> Result<DMatrix<f64>> {
    let r_inv = linalg::spd_inverse(r, "R")?;
    let a = &r_inv * e * u_l.transpose();
    Ok(&a + a.transpose())
}

/// One projected gradient step on `R`. Returns `R` unchanged when `fix_r`.
pub fn update_r(
    r: &DMatrix<f64>,
    u_l: &DVector<f64>,
    e: &DVector<f64>,
    alpha_r: f64,
    fix_r: bool,
) -> Result<DMatrix<f64>> {
    if fix_r {
        return Ok(r.clone());
    }
    let dir = r_direction(r, u_l, e)?;
    Ok(project_r(&(r + dir * alpha_r)))
}

/// `grad sigma_V(x) sigma_g(x)^T`, an `L_V x L_g` matrix.
pub(crate) fn value_input_jacobian(basis: &BasisSet, x: &DVector<f64>) -> DMatrix<f64> {
    basis.sigma_v.jacobian(x) * basis.sigma_g.eval(x).transpose()
}

/// `grad sigma_V sigma_g^T (W_ul^+)^T K^T E` at `x`.
pub fn wv_direction(
    basis: &BasisSet,
    x: &DVector<f64>,
    k: &DMatrix<f64>,
    w_ul: &DMatrix<f64>,
    e: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = wul_pinv(w_ul)?;
    Ok(value_input_jacobian(basis, x) * (p.transpose() * (k.transpose() * e)))
}

/// One guarded step on the value weights. Fails when positivity cannot be
/// restored within the allowed halvings.
#[allow(clippy::too_many_arguments)]
pub fn update_wv(
    w_v: &DVector<f64>,
    k: &DMatrix<f64>,
    w_ul: &DMatrix<f64>,
    e: &DVector<f64>,
    x: &DVector<f64>,
    alpha_v: f64,
    basis: &BasisSet,
    checker: &PositivityChecker,
) -> Result<DVector<f64>> {
    let dir = wv_direction(basis, x, k, w_ul, e)?;
    guarded_step(w_v, &dir, alpha_v, checker).ok_or(Error::NotPositive("value function after step halving"))
}

/// `K' = R_new^-1 R_old K W_ul,old^+ W_ul,new`.
pub fn propagate_k(
    k: &DMatrix<f64>,
    r_old: &DMatrix<f64>,
    r_new: &DMatrix<f64>,
    wul_old: &DMatrix<f64>,
    wul_new: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = wul_pinv(wul_old)?;
    propagate_with_pinv(k, r_old, r_new, &p, wul_new)
}

fn propagate_with_pinv(
    k: &DMatrix<f64>,
    r_old: &DMatrix<f64>,
    r_new: &DMatrix<f64>,
    pinv_old: &DMatrix<f64>,
    wul_new: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r_new_inv = linalg::spd_inverse(r_new, "R")?;
    Ok(r_new_inv * r_old * k * pinv_old * wul_new)
}

struct Loop<'a> {
    pool: &'a SamplePool,
    jac: Vec<DMatrix<f64>>,
    map: &'a WuMap,
    checker: &'a PositivityChecker,
    opts: &'a SgdOptions,
}

struct Iterate {
    r: DMatrix<f64>,
    w_v: DVector<f64>,
    w_ul: DMatrix<f64>,
    pinv: DMatrix<f64>,
    k: DMatrix<f64>,
}

impl Iterate {
    fn new(r: DMatrix<f64>, w_v: DVector<f64>, k: DMatrix<f64>, map: &WuMap) -> Result<Self> {
        let w_ul = map.apply(&w_v);
        let pinv = wul_pinv(&w_ul)?;
        Ok(Iterate { r, w_v, w_ul, pinv, k })
    }

    fn diag(&self, k: usize, e: f64) -> DiagnosticRow {
        DiagnosticRow {
            k,
            e,
            norm_k: Some(self.k.norm()),
            norm_wv: self.w_v.norm(),
            min_eig_r: linalg::min_eigenvalue_sym(&self.r),
        }
    }
}

impl Loop<'_> {
    fn error(&self, it: &Iterate, i: usize) -> (DVector<f64>, DVector<f64>) {
        let u_l = -(&it.k * &self.pool.sigma_u[i]);
        let e = &u_l - &self.pool.inputs[i];
        (u_l, e)
    }

    fn eval_distance(&self, it: &Iterate) -> f64 {
        self.pool.eval.iter().map(|&i| self.error(it, i).1.norm_squared()).sum()
    }

    /// Applies a step along the given directions. `None` when the value step
    /// cannot keep positivity; the caller decides whether to skip or halve.
    fn step(
        &self,
        it: &Iterate,
        dir_r: Option<&DMatrix<f64>>,
        dir_v: &DVector<f64>,
        scale: f64,
    ) -> Result<Option<Iterate>> {
        let r = match dir_r {
            Some(d) if !self.opts.fix_r => project_r(&(&it.r + d * (self.opts.alpha_r * scale))),
            _ => it.r.clone(),
        };
        let w_v = match guarded_step(&it.w_v, dir_v, self.opts.alpha_v * scale, self.checker) {
            Some(w) => w,
            None => return Ok(None),
        };
        let w_ul = self.map.apply(&w_v);
        let k = propagate_with_pinv(&it.k, &it.r, &r, &it.pinv, &w_ul)?;
        let pinv = wul_pinv(&w_ul)?;
        Ok(Some(Iterate { r, w_v, w_ul, pinv, k }))
    }

    fn stochastic(&self, it: Iterate, rng: &mut ChaCha8Rng) -> Result<Iterate> {
        let i = self.pool.draw(rng);
        let (u_l, e) = self.error(&it, i);
        let dir_r = r_direction(&it.r, &u_l, &e)?;
        let dir_v = &self.jac[i] * (it.pinv.transpose() * (it.k.transpose() * &e));
        match self.step(&it, Some(&dir_r), &dir_v, 1.0)? {
            Some(next) => Ok(next),
            None if self.opts.fix_r => Ok(it),
            None => {
                // value step skipped, R step still applies
                let r = project_r(&(&it.r + dir_r * self.opts.alpha_r));
                let k = propagate_with_pinv(&it.k, &it.r, &r, &it.pinv, &it.w_ul)?;
                Ok(Iterate { r, k, ..it })
            }
        }
    }

    /// Backtracking step along the batch-mean direction; `None` when no halving
    /// decreases the distance.
    fn full_batch(&self, it: &Iterate, e_now: f64) -> Result<Option<(Iterate, f64)>> {
        let mut dir_r = DMatrix::zeros(it.r.nrows(), it.r.ncols());
        let mut dir_v = DVector::zeros(it.w_v.len());
        for &i in &self.pool.eval {
            let (u_l, e) = self.error(it, i);
            dir_r += r_direction(&it.r, &u_l, &e)?;
            dir_v += &self.jac[i] * (it.pinv.transpose() * (it.k.transpose() * &e));
        }
        let count = self.pool.eval.len().max(1) as f64;
        dir_r /= count;
        dir_v /= count;
        let mut scale = 1.0;
        for _ in 0..=2 * MAX_HALVINGS {
            if let Some(next) = self.step(it, Some(&dir_r), &dir_v, scale)? {
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
    state: Alg1State,
    diagnostics: Vec<DiagnosticRow>,
    converged: bool,
    final_e: f64,
}

fn run_sgd(
    pool: &SamplePool,
    basis: &BasisSet,
    map: &WuMap,
    checker: &PositivityChecker,
    start: Iterate,
    opts: &SgdOptions,
    seed: u64,
) -> Result<SgdOutcome> {
    let m = pool.inputs[0].len();
    let jac = pool.states.iter().map(|x| value_input_jacobian(basis, x)).collect();
    let lp = Loop {
        pool,
        jac,
        map,
        checker,
        opts,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stop = StopRule::new(opts.threshold(m), opts.window);
    let mut diagnostics = Vec::new();
    let mut it = start;
    let mut e = lp.eval_distance(&it);
    let mut best: Option<(f64, Alg1State)> = None;
    let snapshot = |it: &Iterate, k: usize, stop: &StopRule| Alg1State {
        r: it.r.clone(),
        w_v: it.w_v.clone(),
        w_ul: it.w_ul.clone(),
        k: it.k.clone(),
        iteration: k,
        recent_e: stop.recent(),
    };
    for k in 0..opts.max_iter {
        if !e.is_finite() {
            return Err(Error::NonFinite("policy distance"));
        }
        diagnostics.push(it.diag(k, e));
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

/// Builds the stack for the `Q` solve from the requested source.
#[allow(clippy::too_many_arguments)]
fn q_stack(
    expert: &Trajectory,
    learner: &DynamicalSystem,
    state: &Alg1State,
    basis: &BasisSet,
    opts: &Alg1Options,
    seed: u64,
) -> Result<(HistoryStack, QEstimate)> {
    let threshold = opts.sgd.sigma_min_threshold;
    let expert_stack = || accumulate_expert(expert, &state.r, &state.w_v, basis, &opts.sgd.stack);
    let enhanced = || -> Result<HistoryStack> {
        let peaks = expert.peak_inputs();
        let amp: Vec<f64> = peaks.iter().map(|p| opts.enrichment.fraction * p.max(1e-3)).collect();
        let e = &opts.enrichment;
        let probe = Multisine::log_spaced(&amp, e.count, e.band_hz.0, e.band_hz.1, seed)?;
        let law = ControlLaw::gain(state.k.clone(), basis.sigma_u.clone()).enriched(probe.clone());
        let duration = e.duration.unwrap_or_else(|| expert.duration());
        let traj = simulate(learner, &law, &expert.state(0), expert.dt, duration)?;
        accumulate_enhanced(&traj, &state.k, &state.r, &state.w_v, &probe, basis, &opts.sgd.stack)
    };
    match opts.q_source {
        QSource::Expert => {
            let s = expert_stack()?;
            let q = estimate_wq(&s, threshold)?;
            Ok((s, q))
        }
        QSource::Enhanced => {
            let s = enhanced()?;
            let q = estimate_wq(&s, threshold)?;
            Ok((s, q))
        }
        QSource::Auto => {
            if let Ok(s) = expert_stack() {
                if let Ok(q) = estimate_wq(&s, threshold) {
                    return Ok((s, q));
                }
            }
            let s = enhanced()?;
            let q = estimate_wq(&s, threshold)?;
            Ok((s, q))
        }
    }
}

/// Full estimator: forward-solve the initial guess on the learner, run the
/// gradient loop on expert samples, then solve for `Q`; restart from a random
/// cost when `Q` is not semidefinite.
pub fn run_algorithm1(
    expert: &Trajectory,
    init: &CostSpec,
    learner: &DynamicalSystem,
    basis: &BasisSet,
    map: &WuMap,
    opts: &Alg1Options,
) -> Result<Alg1Result> {
    opts.sgd.validate()?;
    let m = expert.input_dim();
    if init.input_dim() != m || learner.input_dim() != m {
        return Err(Error::Dimension {
            context: "input dimension",
            expected: m,
            actual: init.input_dim(),
        });
    }
    let domain = learner.domain();
    init.validate(basis, domain, opts.sgd.seed)?;
    let pool = SamplePool::new(expert, basis, &opts.sgd)?;
    let value_check = PositivityChecker::value(basis, domain, opts.sgd.positivity_samples, opts.sgd.seed);
    let cost_check = PositivityChecker::state_cost(basis, domain, opts.sgd.positivity_samples, opts.sgd.seed);

    let mut last: Option<Alg1Result> = None;
    let mut diagnostics = Vec::new();
    for attempt in 0..=opts.sgd.max_restarts {
        let cost = if attempt == 0 {
            init.clone()
        } else {
            let s = derive_seed(opts.sgd.seed, 0x5E57 + attempt as u64);
            let r = if opts.sgd.fix_r { init.r.clone() } else { sgd::random_r(m, s) };
            let w_q = sgd::random_quadratic_weights(&basis.sigma_q, domain, derive_seed(s, 2))?;
            CostSpec::new(w_q, r)?
        };
        let mut fwd = opts.forward.clone();
        fwd.seed = derive_seed(opts.forward.seed, attempt as u64);
        if learner.input_weights().is_none() {
            fwd.gain_model = GainModel::Free;
        }
        let initial = match forward_solve(learner, &cost, basis, &fwd) {
            Ok(p) => p,
            Err(e) if attempt == 0 => return Err(e),
            Err(_) => continue,
        };
        let start = Iterate::new(cost.r.clone(), initial.w_v.clone(), initial.k.clone(), map)?;
        let out = run_sgd(
            &pool,
            basis,
            map,
            &value_check,
            start,
            &opts.sgd,
            derive_seed(opts.sgd.seed, 0xA161 + attempt as u64),
        )?;
        let offset = diagnostics.len();
        diagnostics.extend(out.diagnostics.iter().map(|d| DiagnosticRow { k: d.k + offset, ..*d }));
        let (stack, q) = q_stack(
            expert,
            learner,
            &out.state,
            basis,
            opts,
            derive_seed(opts.sgd.seed, 0xE4 + attempt as u64),
        )?;
        let q_psd = cost_check.check(&q.w_q).ok;
        let estimate = CostEstimate {
            w_q: q.w_q.clone(),
            r: out.state.r.clone(),
            w_v: out.state.w_v.clone(),
            k: Some(out.state.k.clone()),
        };
        let result = Alg1Result {
            state: out.state,
            estimate,
            diagnostics: Vec::new(),
            converged: out.converged,
            q_psd,
            restarts: attempt,
            final_e: out.final_e,
            initial,
            q,
            stack,
        };
        last = Some(result);
        if q_psd {
            break;
        }
    }
    let mut result = last.ok_or(Error::IterationCap("restarts", opts.sgd.max_restarts))?;
    result.diagnostics = diagnostics;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{builtin_basis, builtin_domain, BuiltinSystem};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn row(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, xs.len(), xs)
    }

    #[test]
    fn learner_input_examples() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let k = row(&[0.0, 2.0, 0.0, 1.0]);
        assert!((learner_input(&k, &b, &v(&[2.0, 2.0]))[0] + 4.0 + 2.0 * 4f64.cos()).abs() < 1e-12);
        assert!((learner_input(&k, &b, &v(&[0.0, 1.0]))[0] + 3.0).abs() < 1e-12);
        assert_eq!(learner_input(&row(&[0.0; 4]), &b, &v(&[1.0, -1.0]))[0], 0.0);
    }

    #[test]
    fn error_and_distance() {
        assert!((policy_error(&v(&[-2.5]), &v(&[-2.6928]))[0] - 0.1928).abs() < 1e-12);
        assert_eq!(distance(&[]), 0.0);
        assert!((distance(&[v(&[0.3])]) - 0.09).abs() < 1e-15);
        assert_eq!(distance(&[v(&[1.0, 0.0]), v(&[0.0, 2.0])]), 5.0);
    }

    #[test]
    fn r_update_scalar() {
        let r = DMatrix::from_element(1, 1, 0.8);
        let next = update_r(&r, &v(&[1.0]), &v(&[0.2]), 0.01, false).unwrap();
        assert!((next[(0, 0)] - 0.805).abs() < 1e-12);
        assert_eq!(update_r(&r, &v(&[1.0]), &v(&[0.0]), 0.01, false).unwrap(), r);
        assert_eq!(update_r(&r, &v(&[1.0]), &v(&[0.2]), 0.01, true).unwrap(), r);
    }

    #[test]
    fn r_update_floors_eigenvalues() {
        let r = DMatrix::from_element(1, 1, 0.01);
        let next = update_r(&r, &v(&[1.0]), &v(&[-5.0]), 1.0, false).unwrap();
        assert!(next[(0, 0)] >= sgd::R_FLOOR);
    }

    #[test]
    fn propagate_identity_and_scaling() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let map = WuMap::build(&b, &builtin_domain(BuiltinSystem::Example1)).unwrap();
        let w_ul = map.apply(&v(&[0.5, 0.1, 1.0]));
        let r = DMatrix::from_element(1, 1, 0.8);
        let w_g = row(&[0.0, 2.0, 1.0]);
        let k = linalg::spd_inverse(&r, "R").unwrap() * &w_g * &w_ul * 0.5;
        let same = propagate_k(&k, &r, &r, &w_ul, &w_ul).unwrap();
        assert!((&same - &k).amax() < 1e-12);
        let halved = propagate_k(&k, &r, &(&r * 2.0), &w_ul, &w_ul).unwrap();
        assert!((&halved - &k * 0.5).amax() < 1e-12);
    }

    #[test]
    fn wv_update_zero_error_is_identity() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let d = builtin_domain(BuiltinSystem::Example1);
        let map = WuMap::build(&b, &d).unwrap();
        let checker = PositivityChecker::value(&b, &d, 500, 0);
        let w = v(&[0.5, 0.0, 1.0]);
        let out = update_wv(
            &w,
            &row(&[0.0, 2.0, 0.0, 1.0]),
            &map.apply(&w),
            &v(&[0.0]),
            &v(&[1.0, 1.0]),
            0.003,
            &b,
            &checker,
        )
        .unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn rank_deficient_wul_rejected() {
        assert!(matches!(wul_pinv(&DMatrix::zeros(2, 2)), Err(Error::IllConditioned { .. })));
    }
}
