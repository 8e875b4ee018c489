//! State-penalty estimation by least squares on the integral HJB equation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::excitation::Multisine;
use crate::linalg::{self, Quadrature};
use crate::sim::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackSource {
    Expert,
    LearnerEnhanced,
}

/// Rows `(sigma_Q integrated over a window, psi)` of the integral HJB system.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryStack {
    pub phi: DMatrix<f64>,
    pub psi: DVector<f64>,
    pub t_end: Vec<f64>,
    pub window: f64,
    pub source: StackSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackOptions {
    /// Window length `T`, seconds.
    pub window: f64,
    /// Spacing between window end times, seconds.
    pub stride: f64,
    /// Windows whose peak `|x|_inf` is below this fraction of the trajectory
    /// peak are dropped; zero disables the floor.
    pub amplitude_floor: f64,
    pub quadrature: Quadrature,
}

impl Default for StackOptions {
    fn default() -> Self {
        StackOptions {
            window: 0.03,
            stride: 0.03,
            amplitude_floor: 0.01,
            quadrature: Quadrature::Trapezoid,
        }
    }
}

pub const DEFAULT_SIGMA_MIN: f64 = 1e-6;

impl HistoryStack {
    pub fn empty(l_q: usize, window: f64, source: StackSource) -> Self {
        HistoryStack {
            phi: DMatrix::zeros(0, l_q),
            psi: DVector::zeros(0),
            t_end: Vec::new(),
            window,
            source,
        }
    }

    pub fn from_rows(
        l_q: usize,
        rows: &[(f64, DVector<f64>, f64)],
        window: f64,
        source: StackSource,
    ) -> Self {
        HistoryStack {
            phi: DMatrix::from_fn(rows.len(), l_q, |r, c| rows[r].1[c]),
            psi: DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2)),
            t_end: rows.iter().map(|r| r.0).collect(),
            window,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn push_row(&mut self, t_end: f64, sigma_q: &DVector<f64>, psi: f64) {
        let n = self.len();
        let phi = std::mem::replace(&mut self.phi, DMatrix::zeros(0, 0));
        self.phi = phi.insert_row(n, 0.0);
        self.phi.row_mut(n).copy_from(&sigma_q.transpose());
        let p = std::mem::replace(&mut self.psi, DVector::zeros(0));
        self.psi = p.push(psi);
        self.t_end.push(t_end);
    }

    /// Appends the rows of `other`.
    pub fn append(&mut self, other: &HistoryStack) -> Result<()> {
        if other.phi.ncols() != self.phi.ncols() {
            return Err(Error::Dimension {
                context: "history stack columns",
                expected: self.phi.ncols(),
                actual: other.phi.ncols(),
            });
        }
        for i in 0..other.len() {
            self.push_row(other.t_end[i], &other.phi.row(i).transpose(), other.psi[i]);
        }
        Ok(())
    }

    /// Rows as `t_end, sigmaQ_1..sigmaQ_L, psi`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        let mut header = vec!["t_end".to_string()];
        header.extend((1..=self.phi.ncols()).map(|i| format!("sigmaQ_{i}")));
        header.push("psi".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![format!("{:.16e}", self.t_end[i])];
            rec.extend(self.phi.row(i).iter().map(|v| format!("{v:.16e}")));
            rec.push(format!("{:.16e}", self.psi[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, window: f64, source: StackSource) -> Result<Self> {
        let fail = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let header = r.headers()?.clone();
        let cols = header.len();
        if cols < 3 || &header[0] != "t_end" || &header[cols - 1] != "psi" {
            return Err(fail("expected columns t_end, sigmaQ_1.., psi".into()));
        }
        let mut stack = HistoryStack::empty(cols - 2, window, source);
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| fail(format!("row {}: {e}", line + 2)))?;
            if vals.len() != cols {
                return Err(fail(format!("row {} has {} fields", line + 2, vals.len())));
            }
            stack.push_row(vals[0], &DVector::from_column_slice(&vals[1..cols - 1]), vals[cols - 1]);
        }
        Ok(stack)
    }
}

fn window_steps(traj: &Trajectory, opts: &StackOptions) -> Result<(usize, usize)> {
    let w = (opts.window / traj.dt).round() as usize;
    let s = (opts.stride / traj.dt).round() as usize;
    if w < 2 {
        return Err(Error::param("window", "must span at least two samples"));
    }
    if s < 1 {
        return Err(Error::param("stride", "must be at least one sample"));
    }
    if traj.len() <= w {
        return Err(Error::TrajectoryTooShort(format!(
            "{:.3} s is shorter than the {} s window",
            traj.duration(),
            opts.window
        )));
    }
    Ok((w, s))
}

/// Generic accumulator; `penalty(k)` is the input-cost integrand at sample `k`.
fn accumulate<F>(
    traj: &Trajectory,
    w_v: &DVector<f64>,
    basis: &BasisSet,
    opts: &StackOptions,
    source: StackSource,
    penalty: F,
) -> Result<HistoryStack>
where
    F: Fn(usize) -> f64,
{
    if w_v.len() != basis.l_v() {
        return Err(Error::Dimension {
            context: "W_V length",
            expected: basis.l_v(),
            actual: w_v.len(),
        });
    }
    let (w, s) = window_steps(traj, opts)?;
    let weights = linalg::quadrature_weights(opts.quadrature, w, traj.dt);
    let floor = opts.amplitude_floor * traj.peak_state_amplitude();
    let sq: Vec<DVector<f64>> = (0..traj.len()).map(|k| basis.sigma_q.eval(&traj.state(k))).collect();
    let value = |k: usize| basis.sigma_v.dot(w_v, &traj.state(k));
    let mut rows = Vec::new();
    let mut end = w;
    while end < traj.len() {
        let start = end - w;
        let peak = (start..=end).map(|k| traj.state_amplitude(k)).fold(0.0, f64::max);
        if opts.amplitude_floor <= 0.0 || peak >= floor {
            let mut row = DVector::zeros(basis.l_q());
            let mut input_cost = 0.0;
            for (j, wt) in weights.iter().enumerate() {
                row += &sq[start + j] * *wt;
                input_cost += penalty(start + j) * wt;
            }
            rows.push((traj.times[end], row, value(start) - value(end) - input_cost));
        }
        end += s;
    }
    let stack = HistoryStack::from_rows(basis.l_q(), &rows, opts.window, source);
    if stack.is_empty() {
        return Err(Error::DegenerateData("every window is below the amplitude floor".into()));
    }
    Ok(stack)
}

/// Stack from expert data: `psi = V(t - T) - V(t) - int u_e^T R u_e`.
pub fn accumulate_expert(
    traj: &Trajectory,
    r: &DMatrix<f64>,
    w_v: &DVector<f64>,
    basis: &BasisSet,
    opts: &StackOptions,
) -> Result<HistoryStack> {
    accumulate(traj, w_v, basis, opts, StackSource::Expert, |k| {
        let u = traj.input(k);
        (u.transpose() * r * &u)[0]
    })
}

/// Stack from a learner trajectory run under `u* + u_p`, `u* = -K sigma_u(x)`:
/// `psi = V(t - T) - V(t) - int (2 u*^T R u_p + u*^T R u*)`.
pub fn accumulate_enhanced(
    traj: &Trajectory,
    k_conv: &DMatrix<f64>,
    r: &DMatrix<f64>,
    w_v: &DVector<f64>,
    probe: &Multisine,
    basis: &BasisSet,
    opts: &StackOptions,
) -> Result<HistoryStack> {
    if probe.dim() != traj.input_dim() {
        return Err(Error::Dimension {
            context: "enrichment channels",
            expected: traj.input_dim(),
            actual: probe.dim(),
        });
    }
    accumulate(traj, w_v, basis, opts, StackSource::LearnerEnhanced, |k| {
        let u_star = -(k_conv * basis.sigma_u.eval(&traj.state(k)));
        let u_p = probe.eval(traj.times[k]);
        let ru = r * &u_star;
        2.0 * ru.dot(&u_p) + ru.dot(&u_star)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Informativity {
    pub rank: usize,
    pub sigma_min: f64,
    pub informative: bool,
}

/// Rank and smallest singular value of `Phi`; informative when the rank is
/// full and `sigma_min >= threshold`.
pub fn informativity(stack: &HistoryStack, threshold: f64) -> Informativity {
    let (rank, sigma_min) = linalg::rank_and_sigma_min(&stack.phi);
    Informativity {
        rank,
        sigma_min,
        informative: rank == stack.phi.ncols() && sigma_min >= threshold,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QEstimate {
    pub w_q: DVector<f64>,
    pub residual_rms: f64,
    pub informativity: Informativity,
}

/// Least-squares `W_Q` through a QR factorization of `Phi`.
pub fn estimate_wq(stack: &HistoryStack, threshold: f64) -> Result<QEstimate> {
    let info = informativity(stack, threshold);
    if !info.informative {
        return Err(Error::NotInformative {
            rank: info.rank,
            required: stack.phi.ncols(),
            sigma_min: info.sigma_min,
        });
    }
    let qr = stack.phi.clone().qr();
    let qtb = qr.q().transpose() * &stack.psi;
    let w_q = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or(Error::Singular("history stack R factor"))?;
    let resid = &stack.phi * &w_q - &stack.psi;
    let residual_rms = (resid.norm_squared() / stack.len() as f64).sqrt();
    Ok(QEstimate {
        w_q,
        residual_rms,
        informativity: info,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{builtin_basis, make_builtin_system, simulate, BuiltinSystem, ControlLaw};
    use std::collections::BTreeMap;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn example1_expert(duration: f64, dt: f64) -> Trajectory {
        let sys = make_builtin_system("example1", &BTreeMap::new()).unwrap();
        let b = builtin_basis(BuiltinSystem::Example1);
        let law = ControlLaw::gain(DMatrix::from_row_slice(1, 4, &[0.0, 2.0, 0.0, 1.0]), b.sigma_u);
        simulate(&sys, &law, &v(&[2.0, 2.0]), dt, duration).unwrap()
    }

    #[test]
    fn true_parameters_satisfy_integral_identity() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let traj = example1_expert(10.0, 1e-3);
        let stack = accumulate_expert(&traj, &DMatrix::identity(1, 1), &v(&[0.5, 0.0, 1.0]), &b, &StackOptions::default())
            .unwrap();
        let resid = &stack.phi * v(&[1.0, 0.0, 1.0]) - &stack.psi;
        assert!(resid.amax() <= 1e-6, "{}", resid.amax());
        let est = estimate_wq(&stack, DEFAULT_SIGMA_MIN).unwrap();
        assert!((est.w_q - v(&[1.0, 0.0, 1.0])).amax() < 1e-4);
    }

    #[test]
    fn window_count_without_floor() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let traj = example1_expert(10.0, 1e-3);
        let opts = StackOptions {
            amplitude_floor: 0.0,
            ..StackOptions::default()
        };
        let stack = accumulate_expert(&traj, &DMatrix::identity(1, 1), &v(&[0.5, 0.0, 1.0]), &b, &opts).unwrap();
        assert_eq!(stack.len(), 333);
        assert!(informativity(&stack, DEFAULT_SIGMA_MIN).informative);
    }

    #[test]
    fn short_trajectory_rejected() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let traj = example1_expert(0.02, 1e-3);
        let r = accumulate_expert(&traj, &DMatrix::identity(1, 1), &v(&[0.5, 0.0, 1.0]), &b, &StackOptions::default());
        assert!(matches!(r, Err(Error::TrajectoryTooShort(_))));
    }

    #[test]
    fn trapezoid_residual_shrinks_with_step() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let worst = |dt: f64| {
            let traj = example1_expert(3.0, dt);
            let s = accumulate_expert(&traj, &DMatrix::identity(1, 1), &v(&[0.5, 0.0, 1.0]), &b, &StackOptions::default())
                .unwrap();
            (&s.phi * v(&[1.0, 0.0, 1.0]) - &s.psi).amax()
        };
        let (coarse, fine) = (worst(2e-3), worst(1e-3));
        assert!(fine <= 0.5 * coarse, "{coarse} -> {fine}");
    }

    #[test]
    fn duplicated_rows_are_rank_one() {
        let mut stack = HistoryStack::empty(3, 0.03, StackSource::Expert);
        for i in 0..10 {
            stack.push_row(i as f64, &v(&[1.0, 2.0, 3.0]), 1.0);
        }
        let info = informativity(&stack, DEFAULT_SIGMA_MIN);
        assert_eq!(info.rank, 1);
        assert!(!info.informative);
        assert!(matches!(estimate_wq(&stack, DEFAULT_SIGMA_MIN), Err(Error::NotInformative { .. })));
        assert_eq!(informativity(&HistoryStack::empty(3, 0.03, StackSource::Expert), 0.0).rank, 0);
    }

    #[test]
    fn zero_target_gives_zero_weights() {
        let mut stack = HistoryStack::empty(2, 0.03, StackSource::Expert);
        for (i, row) in [[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]].iter().enumerate() {
            stack.push_row(i as f64, &v(row), 0.0);
        }
        assert_eq!(estimate_wq(&stack, DEFAULT_SIGMA_MIN).unwrap().w_q, DVector::zeros(2));
    }

    #[test]
    fn stack_csv_round_trip() {
        let mut stack = HistoryStack::empty(2, 0.03, StackSource::Expert);
        stack.push_row(0.03, &v(&[0.1, -0.2]), 0.7);
        stack.push_row(0.06, &v(&[1.0 / 3.0, 2.0]), -1.5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stack.csv");
        stack.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("t_end,sigmaQ_1,sigmaQ_2,psi\n"));
        assert_eq!(HistoryStack::read_csv(&p, 0.03, StackSource::Expert).unwrap(), stack);
    }

    #[test]
    fn zero_probe_matches_expert_rows() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let traj = example1_expert(2.0, 1e-3);
        let k = DMatrix::from_row_slice(1, 4, &[0.0, 2.0, 0.0, 1.0]);
        let r = DMatrix::identity(1, 1);
        let w_v = v(&[0.5, 0.0, 1.0]);
        let opts = StackOptions::default();
        let e = accumulate_expert(&traj, &r, &w_v, &b, &opts).unwrap();
        let h = accumulate_enhanced(&traj, &k, &r, &w_v, &Multisine::zero(1), &b, &opts).unwrap();
        assert_eq!(e.phi, h.phi);
        assert!((e.psi - h.psi).amax() < 1e-12);
    }
}
