use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ControlLaw, DynamicalSystem, Trajectory, TrajectoryMeta};
use crate::error::{Error, Result};

pub const DIVERGENCE_BOUND: f64 = 1e6;

static SIMULATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of [`simulate`] calls made by this process.
pub fn simulation_count() -> usize {
    SIMULATIONS.load(Ordering::Relaxed)
}

/// Fixed-step RK4 integration of the closed loop. The law is re-evaluated at
/// every stage; `inputs[k]` is the law at `(t_k, x_k)`.
pub fn simulate(
    sys: &DynamicalSystem,
    law: &ControlLaw,
    x0: &DVector<f64>,
    dt: f64,
    duration: f64,
) -> Result<Trajectory> {
    SIMULATIONS.fetch_add(1, Ordering::Relaxed);
    let (n, m) = (sys.state_dim(), sys.input_dim());
    if x0.len() != n {
        return Err(Error::Dimension {
            context: "initial state",
            expected: n,
            actual: x0.len(),
        });
    }
    if law.input_dim() != m {
        return Err(Error::Dimension {
            context: "control law output",
            expected: m,
            actual: law.input_dim(),
        });
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::param("dt", "must be positive"));
    }
    if !(duration >= dt) {
        return Err(Error::param("duration", "must be at least one step"));
    }
    let steps = (duration / dt).round() as usize;
    let mut states = DMatrix::zeros(steps + 1, n);
    let mut inputs = DMatrix::zeros(steps + 1, m);
    let mut times = Vec::with_capacity(steps + 1);
    let field = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let u = law.eval(t, x);
        let dx = sys.rhs(x, &u);
        if dx.iter().all(|v| v.is_finite()) {
            Ok(dx)
        } else {
            Err(Error::NonFinite("system vector field"))
        }
    };

    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * dt;
        times.push(t);
        let u = law.eval(t, &x);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control law"));
        }
        states.row_mut(k).copy_from(&x.transpose());
        inputs.row_mut(k).copy_from(&u.transpose());
        if k == steps {
            break;
        }
        let k1 = field(t, &x)?;
        let k2 = field(t + 0.5 * dt, &(&x + &k1 * (0.5 * dt)))?;
        let k3 = field(t + 0.5 * dt, &(&x + &k2 * (0.5 * dt)))?;
        let k4 = field(t + dt, &(&x + &k3 * dt))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if x.amax() > DIVERGENCE_BOUND || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                time: t + dt,
                bound: DIVERGENCE_BOUND,
            });
        }
    }
    let meta = TrajectoryMeta {
        system: sys.name().to_string(),
        seed: None,
        noise: 0.0,
    };
    Trajectory::new(dt, times, states, inputs, meta)
}

/// Multiplies every state and input sample by `1 + pct * eta`, `eta ~ U[-1, 1]`,
/// drawing states then inputs at each time step.
pub fn add_measurement_noise(traj: &Trajectory, pct: f64, seed: u64) -> Result<Trajectory> {
    if !(0.0..=1.0).contains(&pct) {
        return Err(Error::param("noise", "fraction must lie in [0, 1]"));
    }
    let mut out = traj.clone();
    out.meta.seed = Some(seed);
    out.meta.noise = pct;
    if pct == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..out.len() {
        for j in 0..out.state_dim() {
            out.states[(k, j)] *= 1.0 + pct * rng.random_range(-1.0..=1.0);
        }
        for j in 0..out.input_dim() {
            out.inputs[(k, j)] *= 1.0 + pct * rng.random_range(-1.0..=1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::sim::{builtin_basis, make_builtin_system, BuiltinSystem};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn linear2d() -> DynamicalSystem {
        make_builtin_system("linear2d", &BTreeMap::new()).unwrap()
    }

    #[test]
    fn zero_field_keeps_state() {
        let sys = DynamicalSystem::custom(
            "still",
            2,
            1,
            Arc::new(|_| DVector::zeros(2)),
            Arc::new(|_| DMatrix::zeros(2, 1)),
            Domain::symmetric(&[3.0, 3.0]),
        );
        let law = ControlLaw::feedback(1, |t, _| DVector::from_element(1, t.sin()));
        let traj = simulate(&sys, &law, &v(&[2.0, 2.0]), 1e-3, 0.5).unwrap();
        assert!(traj.states.row_iter().all(|r| r[0] == 2.0 && r[1] == 2.0));
    }

    #[test]
    fn linear_free_response_matches_matrix_exponential() {
        let traj = simulate(&linear2d(), &ControlLaw::zero(1), &v(&[-0.5, 0.5]), 1e-3, 1.0).unwrap();
        // A = diag(1, -2) so exp(A) is diagonal
        let exact = v(&[-0.5 * 1f64.exp(), 0.5 * (-2f64).exp()]);
        let last = traj.state(traj.len() - 1);
        assert!((last - exact).amax() < 1e-8);
        assert_eq!(traj.len(), 1001);
        assert_eq!(traj.times[1000], 1.0);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let law = ControlLaw::feedback(1, |_, x: &DVector<f64>| DVector::from_element(1, -x[0].sin()));
        let x0 = v(&[0.9, -0.4]);
        let final_state = |dt: f64| {
            let t = simulate(&linear2d(), &law, &x0, dt, 1.0).unwrap();
            t.state(t.len() - 1)
        };
        let dt = 0.04;
        let reference = final_state(dt / 8.0);
        let e1 = (final_state(dt) - &reference).amax();
        let e2 = (final_state(dt / 2.0) - &reference).amax();
        assert!(e1 / e2 >= 12.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn optimal_example1_closed_loop_settles() {
        let sys = make_builtin_system("example1", &BTreeMap::new()).unwrap();
        let b = builtin_basis(BuiltinSystem::Example1);
        let law = ControlLaw::gain(DMatrix::from_row_slice(1, 4, &[0.0, 2.0, 0.0, 1.0]), b.sigma_u.clone());
        let traj = simulate(&sys, &law, &v(&[2.0, 2.0]), 1e-3, 10.0).unwrap();
        assert!(traj.state(traj.len() - 1).norm() < 1e-3);
        let fine = simulate(&sys, &law, &v(&[2.0, 2.0]), 1e-4, 10.0).unwrap();
        assert!((traj.state(traj.len() - 1) - fine.state(fine.len() - 1)).amax() < 1e-9);
        for k in (0..traj.len()).step_by(97) {
            let x = traj.state(k);
            let expected = -((2.0 * x[0]).cos() + 2.0) * x[1];
            assert!((traj.inputs[(k, 0)] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn unstable_loop_reports_divergence() {
        let law = ControlLaw::feedback(1, |_, x: &DVector<f64>| DVector::from_element(1, 50.0 * x[0]));
        let r = simulate(&linear2d(), &law, &v(&[1.0, 0.0]), 1e-3, 10.0);
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn noise_contracts() {
        let traj = simulate(&linear2d(), &ControlLaw::zero(1), &v(&[-0.5, 0.5]), 1e-3, 0.2).unwrap();
        let same = add_measurement_noise(&traj, 0.0, 3).unwrap();
        assert_eq!(same.states, traj.states);
        let a = add_measurement_noise(&traj, 0.03, 3).unwrap();
        let b = add_measurement_noise(&traj, 0.03, 3).unwrap();
        assert_eq!(a, b);
        for (o, i) in a.states.iter().zip(traj.states.iter()) {
            assert!((o - i).abs() <= 0.03 * i.abs() + 1e-15);
        }
        assert!(add_measurement_noise(&traj, 1.5, 3).is_err());
    }
}
