use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::riccati::solve_riccati;
use crate::basis::{check_pd_value, check_psd_state_cost, BasisSet, WuMap, DEFAULT_POSITIVITY_SAMPLES};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::excitation::Multisine;
use crate::linalg::{self, derive_seed, Quadrature};
use crate::sim::{simulate, ControlLaw, DynamicalSystem, Trajectory, DEFAULT_DT};

static SOLVES: AtomicUsize = AtomicUsize::new(0);

/// Number of integral policy-iteration solves made by this process.
pub fn forward_solve_count() -> usize {
    SOLVES.load(Ordering::Relaxed)
}

/// Cost weights `(W_Q, R)` of `Q(x) = W_Q . sigma_Q(x)` and `u^T R u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub w_q: DVector<f64>,
    pub r: DMatrix<f64>,
}

impl CostSpec {
    pub fn new(w_q: DVector<f64>, r: DMatrix<f64>) -> Result<Self> {
        if r.nrows() != r.ncols() {
            return Err(Error::Dimension {
                context: "R columns",
                expected: r.nrows(),
                actual: r.ncols(),
            });
        }
        if (&r - r.transpose()).amax() > 1e-12 * r.amax().max(1.0) {
            return Err(Error::param("R", "must be symmetric"));
        }
        if !(linalg::min_eigenvalue_sym(&r) > 0.0) {
            return Err(Error::NotPositive("R"));
        }
        Ok(CostSpec { w_q, r })
    }

    /// Scalar `R = r I_m`.
    pub fn scalar_r(w_q: DVector<f64>, r: f64, m: usize) -> Result<Self> {
        CostSpec::new(w_q, DMatrix::identity(m, m) * r)
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    /// Checks `Q` is positive semidefinite on the domain.
    pub fn validate(&self, basis: &BasisSet, domain: &Domain, seed: u64) -> Result<()> {
        if self.w_q.len() != basis.l_q() {
            return Err(Error::Dimension {
                context: "W_Q length",
                expected: basis.l_q(),
                actual: self.w_q.len(),
            });
        }
        if !check_psd_state_cost(&self.w_q, basis, domain, DEFAULT_POSITIVITY_SAMPLES, seed).ok {
            return Err(Error::NotPositive("state penalty Q"));
        }
        Ok(())
    }

    /// Symmetric `Qbar` with `Q(x) ~ x^T Qbar x` near the origin.
    pub fn quadratic_part(&self, basis: &BasisSet) -> DMatrix<f64> {
        let n = basis.state_dim;
        if let Some(q) = basis.sigma_q.quadratic_form(&self.w_q, n) {
            return q;
        }
        let h = 1e-4;
        let q = |x: &DVector<f64>| basis.sigma_q.dot(&self.w_q, x);
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut x = DVector::zeros(n);
                let mut f = 0.0;
                for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    x.fill(0.0);
                    x[i] += si * h;
                    x[j] += sj * h;
                    f += sign * q(&x);
                }
                out[(i, j)] = 0.5 * f / (4.0 * h * h);
            }
        }
        (&out + out.transpose()) * 0.5
    }
}

/// Value weights with the gain of the induced policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValuePolicyPair {
    pub w_v: DVector<f64>,
    /// `m x L_u`; the policy is `u = -K sigma_u(x)`.
    pub k: DMatrix<f64>,
    /// RMS residual of the final integral Bellman regression.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOptions {
    /// Integral Bellman window length, seconds.
    pub window: f64,
    pub dt: f64,
    /// Stop when `|K_{i+1} - K_i|_inf <= tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Learner rollouts; explicit `initial_states` are used first, the rest are
    /// drawn from the domain scaled by `start_fraction`.
    pub rollouts: usize,
    pub initial_states: Vec<DVector<f64>>,
    pub start_fraction: f64,
    pub rollout_duration: f64,
    pub probe_count: usize,
    pub probe_band_hz: (f64, f64),
    /// Probe amplitude as a fraction of the nominal input scale.
    pub probe_fraction: f64,
    pub quadrature: Quadrature,
    /// Initial stabilizing gain; Riccati on the linearization when absent.
    pub initial_gain: Option<DMatrix<f64>>,
    pub gain_model: GainModel,
    pub seed: u64,
}

/// How policy improvement produces the next gain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainModel {
    /// Gain fitted jointly with the value weights; uses no model of `g`.
    #[default]
    Free,
    /// Gain derived from the value weights through the system's input
    /// weights: `K = 1/2 R^-1 W_g W_u(W_V)`.
    FromValue,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            window: 0.03,
            dt: DEFAULT_DT,
            tol: 1e-9,
            max_iter: 100,
            rollouts: 6,
            initial_states: Vec::new(),
            start_fraction: 1.0,
            rollout_duration: 3.0,
            probe_count: 8,
            probe_band_hz: (0.1, 10.0),
            probe_fraction: 0.2,
            quadrature: Quadrature::Simpson,
            initial_gain: None,
            gain_model: GainModel::Free,
            seed: 0,
        }
    }
}

/// Integrals over one window `[t_end - T, t_end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowIntegrals {
    pub t_end: f64,
    /// `sigma_V(x(t_end - T)) - sigma_V(x(t_end))`.
    pub d_sigma_v: DVector<f64>,
    /// `int sigma_Q`.
    pub sigma_q: DVector<f64>,
    /// `int sigma_u sigma_u^T`.
    pub m_ss: DMatrix<f64>,
    /// `int u sigma_u^T`.
    pub m_us: DMatrix<f64>,
}

/// Non-overlapping windows of `window` seconds over the whole trajectory.
pub fn window_integrals(
    traj: &Trajectory,
    basis: &BasisSet,
    window: f64,
    rule: Quadrature,
) -> Result<Vec<WindowIntegrals>> {
    let steps = (window / traj.dt).round() as usize;
    if steps < 2 {
        return Err(Error::param("window", "must span at least two samples"));
    }
    if traj.len() <= steps {
        return Err(Error::TrajectoryTooShort(format!(
            "{:.3} s is shorter than one {window} s window",
            traj.duration()
        )));
    }
    let weights = linalg::quadrature_weights(rule, steps, traj.dt);
    let su: Vec<DVector<f64>> = (0..traj.len()).map(|k| basis.sigma_u.eval(&traj.state(k))).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start + steps < traj.len() {
        let end = start + steps;
        let mut sq = DVector::zeros(basis.l_q());
        let mut m_ss = DMatrix::zeros(basis.l_u(), basis.l_u());
        let mut m_us = DMatrix::zeros(traj.input_dim(), basis.l_u());
        for (j, w) in weights.iter().enumerate() {
            let k = start + j;
            let x = traj.state(k);
            sq += basis.sigma_q.eval(&x) * *w;
            m_ss += &su[k] * su[k].transpose() * *w;
            m_us += traj.input(k) * su[k].transpose() * *w;
        }
        out.push(WindowIntegrals {
            t_end: traj.times[end],
            d_sigma_v: basis.sigma_v.eval(&traj.state(start)) - basis.sigma_v.eval(&traj.state(end)),
            sigma_q: sq,
            m_ss,
            m_us,
        });
        start = end;
    }
    Ok(out)
}

/// Riccati gain on the Jacobian linearization at the origin, mapped onto the
/// linear terms of `sigma_u`.
pub fn linearized_initial_gain(
    sys: &DynamicalSystem,
    cost: &CostSpec,
    basis: &BasisSet,
) -> Result<DMatrix<f64>> {
    let (a, b) = sys.linearize_at_origin();
    let qbar = linalg::project_spd(&cost.quadratic_part(basis), 0.0);
    let lin = solve_riccati(&a, &b, &qbar, &cost.r)?;
    let n = basis.state_dim;
    let mut k = DMatrix::zeros(sys.input_dim(), basis.l_u());
    for i in 0..n {
        let slot = basis.sigma_u.terms().iter().enumerate().find_map(|(idx, t)| match t.as_linear(n) {
            Some((var, c)) if var == i && c != 0.0 => Some((idx, c)),
            _ => None,
        });
        match slot {
            Some((idx, c)) => {
                for r in 0..k.nrows() {
                    k[(r, idx)] = lin.k[(r, i)] / c;
                }
            }
            None if lin.k.column(i).amax() > 1e-12 => {
                return Err(Error::InvalidBasis {
                    family: "sigma_u",
                    reason: format!("needs a linear term in x{} to seed the forward solver", i + 1),
                })
            }
            None => {}
        }
    }
    Ok(k)
}

/// Learner rollouts under `u = -K0 sigma_u(x) + u_p(t)`.
pub fn collect_learner_data(
    sys: &DynamicalSystem,
    basis: &BasisSet,
    k0: &DMatrix<f64>,
    opts: &ForwardOptions,
) -> Result<Vec<Trajectory>> {
    let starts = rollout_starts(sys.domain(), opts);
    let base = ControlLaw::gain(k0.clone(), basis.sigma_u.clone());
    let m = sys.input_dim();
    let mut nominal = vec![0.0f64; m];
    for x in &starts {
        let u = base.eval(0.0, x);
        for (c, v) in nominal.iter_mut().zip(u.iter()) {
            *c = c.max(v.abs());
        }
    }
    let nominal: Vec<f64> = nominal.iter().map(|v| v.max(1e-3)).collect();
    starts
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let amp: Vec<f64> = nominal.iter().map(|v| opts.probe_fraction * v).collect();
            let probe = Multisine::log_spaced(
                &amp,
                opts.probe_count,
                opts.probe_band_hz.0,
                opts.probe_band_hz.1,
                derive_seed(opts.seed, 1000 + i as u64),
            )?;
            simulate(sys, &base.clone().enriched(probe), x0, opts.dt, opts.rollout_duration)
        })
        .collect()
}

fn rollout_starts(domain: &Domain, opts: &ForwardOptions) -> Vec<DVector<f64>> {
    let mut starts: Vec<DVector<f64>> = opts.initial_states.clone();
    let extra = opts.rollouts.saturating_sub(starts.len());
    let scaled = Domain {
        lo: &domain.lo * opts.start_fraction,
        hi: &domain.hi * opts.start_fraction,
    };
    starts.extend(scaled.samples(extra, derive_seed(opts.seed, 999), 1e-3));
    starts
}

/// Off-policy integral policy iteration on recorded learner data.
pub fn integral_rl_solve(
    data: &[Trajectory],
    cost: &CostSpec,
    basis: &BasisSet,
    domain: &Domain,
    k0: &DMatrix<f64>,
    opts: &ForwardOptions,
) -> Result<ValuePolicyPair> {
    SOLVES.fetch_add(1, Ordering::Relaxed);
    let mut windows = Vec::new();
    for traj in data {
        windows.extend(window_integrals(traj, basis, opts.window, opts.quadrature)?);
    }
    let pair = policy_iteration(&windows, cost, basis, k0, opts)?;
    if !check_pd_value(&pair.w_v, basis, domain, DEFAULT_POSITIVITY_SAMPLES, opts.seed).ok {
        return Err(Error::NotPositive("forward-solved value function"));
    }
    Ok(pair)
}

fn policy_iteration(
    windows: &[WindowIntegrals],
    cost: &CostSpec,
    basis: &BasisSet,
    k0: &DMatrix<f64>,
    opts: &ForwardOptions,
) -> Result<ValuePolicyPair> {
    let (l_v, l_u, m) = (basis.l_v(), basis.l_u(), cost.input_dim());
    let cols = l_v + m * l_u;
    if windows.len() < cols {
        return Err(Error::RankDeficient {
            rank: windows.len(),
            cols,
        });
    }
    let q_int: Vec<f64> = windows.iter().map(|w| cost.w_q.dot(&w.sigma_q)).collect();
    let mut k = k0.clone();
    for it in 1..=opts.max_iter {
        let rk = k.transpose() * &cost.r * &k;
        let mut a = DMatrix::zeros(windows.len(), cols);
        let mut b = DVector::zeros(windows.len());
        for (row, w) in windows.iter().enumerate() {
            a.view_mut((row, 0), (1, l_v)).copy_from(&w.d_sigma_v.transpose());
            let coef = (&cost.r * (&w.m_us + &k * &w.m_ss)) * 2.0;
            for (j, c) in coef.iter().enumerate() {
                a[(row, l_v + j)] = *c;
            }
            b[row] = q_int[row] + rk.dot(&w.m_ss);
        }
        let sol = linalg::lstsq(&a, &b, 1e-12)?;
        let w_v = sol.rows(0, l_v).into_owned();
        let k_next = DMatrix::from_column_slice(m, l_u, sol.rows(l_v, m * l_u).as_slice());
        let step = (&k_next - &k).amax();
        k = k_next;
        if !k.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("policy iteration gain"));
        }
        if step <= opts.tol {
            let pair = ValuePolicyPair {
                residual: 0.0,
                w_v,
                k,
                iterations: it,
            };
            let residual = bellman_residual(&pair, cost, windows);
            return Ok(ValuePolicyPair { residual, ..pair });
        }
    }
    Err(Error::IterationCap("policy iteration", opts.max_iter))
}

/// RMS of the integral Bellman residual of a fixed pair over windows.
pub fn bellman_residual(pair: &ValuePolicyPair, cost: &CostSpec, windows: &[WindowIntegrals]) -> f64 {
    if windows.is_empty() {
        return 0.0;
    }
    let k = &pair.k;
    let rk = k.transpose() * &cost.r * k;
    let sum: f64 = windows
        .iter()
        .map(|w| {
            let lhs = w.d_sigma_v.dot(&pair.w_v) + ((&cost.r * (&w.m_us + k * &w.m_ss)) * 2.0).dot(k);
            let rhs = cost.w_q.dot(&w.sigma_q) + rk.dot(&w.m_ss);
            (lhs - rhs).powi(2)
        })
        .sum();
    (sum / windows.len() as f64).sqrt()
}

/// Full forward solve: seed gain, learner rollouts, policy iteration.
pub fn forward_solve(
    sys: &DynamicalSystem,
    cost: &CostSpec,
    basis: &BasisSet,
    opts: &ForwardOptions,
) -> Result<ValuePolicyPair> {
    if cost.input_dim() != sys.input_dim() {
        return Err(Error::Dimension {
            context: "R size",
            expected: sys.input_dim(),
            actual: cost.input_dim(),
        });
    }
    let k0 = match &opts.initial_gain {
        Some(k) => k.clone(),
        None => linearized_initial_gain(sys, cost, basis)?,
    };
    let data = collect_learner_data(sys, basis, &k0, opts)?;
    match opts.gain_model {
        GainModel::Free => integral_rl_solve(&data, cost, basis, sys.domain(), &k0, opts),
        GainModel::FromValue => {
            let w_g = sys
                .input_weights()
                .ok_or_else(|| Error::param("gain_model", "the system exposes no input weights"))?;
            integral_rl_solve_known_input(&data, cost, basis, sys.domain(), w_g, &k0, opts)
        }
    }
}

/// Window integrals of `grad sigma_V g u` and `grad sigma_V g (x) sigma_u`.
struct CouplingIntegrals {
    base: WindowIntegrals,
    c_u: DVector<f64>,
    /// Column `a + m b` integrates `(grad sigma_V g)[:, a] sigma_u[b]`.
    c_s: DMatrix<f64>,
}

fn coupling_integrals(
    traj: &Trajectory,
    basis: &BasisSet,
    w_g: &DMatrix<f64>,
    opts: &ForwardOptions,
) -> Result<Vec<CouplingIntegrals>> {
    let base = window_integrals(traj, basis, opts.window, opts.quadrature)?;
    let steps = (opts.window / traj.dt).round() as usize;
    let weights = linalg::quadrature_weights(opts.quadrature, steps, traj.dt);
    let (l_v, l_u, m) = (basis.l_v(), basis.l_u(), traj.input_dim());
    let jg: Vec<DMatrix<f64>> = (0..traj.len())
        .map(|k| {
            let x = traj.state(k);
            basis.sigma_v.jacobian(&x) * basis.sigma_g.eval(&x).transpose() * w_g.transpose()
        })
        .collect();
    let su: Vec<DVector<f64>> = (0..traj.len()).map(|k| basis.sigma_u.eval(&traj.state(k))).collect();
    Ok(base
        .into_iter()
        .enumerate()
        .map(|(idx, base)| {
            let start = idx * steps;
            let mut c_u = DVector::zeros(l_v);
            let mut c_s = DMatrix::zeros(l_v, m * l_u);
            for (j, w) in weights.iter().enumerate() {
                let k = start + j;
                c_u += &jg[k] * traj.input(k) * *w;
                for (b, s) in su[k].iter().enumerate() {
                    for a in 0..m {
                        let mut col = c_s.column_mut(a + m * b);
                        col.axpy(s * *w, &jg[k].column(a), 1.0);
                    }
                }
            }
            CouplingIntegrals { base, c_u, c_s }
        })
        .collect())
}

/// Off-policy integral policy iteration with the policy improvement done
/// through known input weights, so the gain is always consistent with the
/// value weights.
#[allow(clippy::too_many_arguments)]
pub fn integral_rl_solve_known_input(
    data: &[Trajectory],
    cost: &CostSpec,
    basis: &BasisSet,
    domain: &Domain,
    w_g: &DMatrix<f64>,
    k0: &DMatrix<f64>,
    opts: &ForwardOptions,
) -> Result<ValuePolicyPair> {
    SOLVES.fetch_add(1, Ordering::Relaxed);
    let map = WuMap::build(basis, domain)?;
    let mut windows = Vec::new();
    for traj in data {
        windows.extend(coupling_integrals(traj, basis, w_g, opts)?);
    }
    let l_v = basis.l_v();
    if windows.len() < l_v {
        return Err(Error::RankDeficient {
            rank: windows.len(),
            cols: l_v,
        });
    }
    let r_inv = linalg::spd_inverse(&cost.r, "R")?;
    let q_int: Vec<f64> = windows.iter().map(|w| cost.w_q.dot(&w.base.sigma_q)).collect();
    let mut k = k0.clone();
    for it in 1..=opts.max_iter {
        let rk = k.transpose() * &cost.r * &k;
        let vec_k = DVector::from_column_slice(k.as_slice());
        let mut a = DMatrix::zeros(windows.len(), l_v);
        let mut b = DVector::zeros(windows.len());
        for (row, w) in windows.iter().enumerate() {
            let coef = &w.base.d_sigma_v + &w.c_u + &w.c_s * &vec_k;
            a.row_mut(row).copy_from(&coef.transpose());
            b[row] = q_int[row] + rk.dot(&w.base.m_ss);
        }
        let w_v = linalg::lstsq(&a, &b, 1e-12)?;
        let k_next = &r_inv * w_g * map.apply(&w_v) * 0.5;
        let step = (&k_next - &k).amax();
        k = k_next;
        if !k.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("policy iteration gain"));
        }
        if step <= opts.tol {
            let plain: Vec<WindowIntegrals> = windows.iter().map(|w| w.base.clone()).collect();
            let pair = ValuePolicyPair {
                residual: 0.0,
                w_v,
                k,
                iterations: it,
            };
            let residual = bellman_residual(&pair, cost, &plain);
            if !check_pd_value(&pair.w_v, basis, domain, DEFAULT_POSITIVITY_SAMPLES, opts.seed).ok {
                return Err(Error::NotPositive("forward-solved value function"));
            }
            return Ok(ValuePolicyPair { residual, ..pair });
        }
    }
    Err(Error::IterationCap("policy iteration", opts.max_iter))
}
