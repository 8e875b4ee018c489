use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisMatrix;
use crate::domain::Domain;
use crate::error::{Error, Result};

pub type DriftFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type InputMapFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Access to the input map `g(x)` only.
///
/// The known-input-dynamics estimator takes this instead of a full system so
/// that it cannot simulate anything.
pub trait InputMap: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// `g(x)`, an `n x m` matrix.
    fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Clone)]
enum Dynamics {
    Example1,
    /// Rigid-body attitude dynamics with principal inertias.
    Quadrotor { inertia: [f64; 3] },
    Linear { a: DMatrix<f64>, b: DMatrix<f64> },
    Custom { f: DriftFn, g: InputMapFn },
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::Example1 => write!(f, "Example1"),
            Dynamics::Quadrotor { inertia } => write!(f, "Quadrotor {{ inertia: {inertia:?} }}"),
            Dynamics::Linear { a, b } => write!(f, "Linear {{ a: {a:?}, b: {b:?} }}"),
            Dynamics::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// Input-affine system `xdot = f(x) + g(x) u`.
#[derive(Clone, Debug)]
pub struct DynamicalSystem {
    name: String,
    state_dim: usize,
    input_dim: usize,
    dynamics: Dynamics,
    /// Multiplier applied to `g` (input-dynamics uncertainty).
    input_scale: f64,
    domain: Domain,
    /// `W_g` with `g(x)^T = W_g sigma_g(x)`, when known.
    w_g: Option<DMatrix<f64>>,
}

impl DynamicalSystem {
    pub(crate) fn example1() -> Self {
        DynamicalSystem {
            name: "example1".into(),
            state_dim: 2,
            input_dim: 1,
            dynamics: Dynamics::Example1,
            input_scale: 1.0,
            domain: Domain::symmetric(&[2.0, 2.0]),
            w_g: Some(DMatrix::from_row_slice(1, 3, &[0.0, 2.0, 1.0])),
        }
    }

    pub(crate) fn quadrotor(inertia: [f64; 3]) -> Result<Self> {
        if inertia.iter().any(|&i| !(i > 0.0) || !i.is_finite()) {
            return Err(Error::param("inertia", "moments of inertia must be positive"));
        }
        let mut w_g = DMatrix::zeros(3, 6);
        for i in 0..3 {
            w_g[(i, 3 + i)] = 1.0 / inertia[i];
        }
        Ok(DynamicalSystem {
            name: "quadrotor_rot".into(),
            state_dim: 6,
            input_dim: 3,
            dynamics: Dynamics::Quadrotor { inertia },
            input_scale: 1.0,
            domain: Domain::symmetric(&[2.0, 2.0, 2.0, 5.0, 5.0, 5.0]),
            w_g: Some(w_g),
        })
    }

    /// Linear system `xdot = A x + B u`; `W_g = B^T` over `sigma_g = I`.
    pub fn linear(name: &str, a: DMatrix<f64>, b: DMatrix<f64>, domain: Domain) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension {
                context: "A columns",
                expected: n,
                actual: a.ncols(),
            });
        }
        if b.nrows() != n {
            return Err(Error::Dimension {
                context: "B rows",
                expected: n,
                actual: b.nrows(),
            });
        }
        if domain.dim() != n {
            return Err(Error::Dimension {
                context: "domain dimension",
                expected: n,
                actual: domain.dim(),
            });
        }
        let w_g = b.transpose();
        Ok(DynamicalSystem {
            name: name.into(),
            state_dim: n,
            input_dim: b.ncols(),
            dynamics: Dynamics::Linear { a, b },
            input_scale: 1.0,
            domain,
            w_g: Some(w_g),
        })
    }

    /// System defined by closures. No parametric `W_g` is attached.
    pub fn custom(
        name: &str,
        state_dim: usize,
        input_dim: usize,
        f: DriftFn,
        g: InputMapFn,
        domain: Domain,
    ) -> Self {
        DynamicalSystem {
            name: name.into(),
            state_dim,
            input_dim,
            dynamics: Dynamics::Custom { f, g },
            input_scale: 1.0,
            domain,
            w_g: None,
        }
    }

    /// Attaches `W_g` (`m x L_g`) for a custom system.
    pub fn with_input_weights(mut self, w_g: DMatrix<f64>) -> Self {
        self.w_g = Some(w_g * self.input_scale);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn input_weights(&self) -> Option<&DMatrix<f64>> {
        self.w_g.as_ref()
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.dynamics {
            Dynamics::Example1 => {
                let (x1, x2) = (x[0], x[1]);
                let c = (2.0 * x1).cos() + 2.0;
                DVector::from_column_slice(&[-x1 + x2, -0.5 * x1 - 0.5 * x2 * (1.0 - c * c)])
            }
            Dynamics::Quadrotor { inertia: [ixx, iyy, izz] } => {
                let (p, q, r) = (x[3], x[4], x[5]);
                DVector::from_column_slice(&[
                    p,
                    q,
                    r,
                    -(iyy - izz) / ixx * q * r,
                    -(izz - ixx) / iyy * p * r,
                    -(ixx - iyy) / izz * p * q,
                ])
            }
            Dynamics::Linear { a, .. } => a * x,
            Dynamics::Custom { f, .. } => f(x),
        }
    }

    /// `g(x)`, an `n x m` matrix.
    pub fn g(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let g = match &self.dynamics {
            Dynamics::Example1 => {
                DMatrix::from_column_slice(2, 1, &[0.0, (2.0 * x[0]).cos() + 2.0])
            }
            Dynamics::Quadrotor { inertia } => {
                let mut g = DMatrix::zeros(6, 3);
                for i in 0..3 {
                    g[(3 + i, i)] = 1.0 / inertia[i];
                }
                g
            }
            Dynamics::Linear { b, .. } => b.clone(),
            Dynamics::Custom { g, .. } => g(x),
        };
        if self.input_scale == 1.0 {
            g
        } else {
            g * self.input_scale
        }
    }

    /// `f(x) + g(x) u`.
    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.g(x) * u
    }

    /// `(A, B)` when the system is linear.
    pub fn linear_matrices(&self) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        match &self.dynamics {
            Dynamics::Linear { a, b } => Some((a.clone(), b * self.input_scale)),
            _ => None,
        }
    }

    /// Jacobian linearization at the origin: central differences for `A`, `B = g(0)`.
    pub fn linearize_at_origin(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        if let Some(ab) = self.linear_matrices() {
            return ab;
        }
        let n = self.state_dim;
        let h = 1e-6;
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut xp = DVector::zeros(n);
            xp[j] = h;
            let col = (self.drift(&xp) - self.drift(&-&xp)) / (2.0 * h);
            a.set_column(j, &col);
        }
        (a, self.g(&DVector::zeros(n)))
    }

    /// Max over domain samples of `|g(x)^T - W_g sigma_g(x)|_inf`.
    pub fn input_weight_error(&self, sigma_g: &BasisMatrix, samples: usize, seed: u64) -> Option<f64> {
        let w_g = self.w_g.as_ref()?;
        if w_g.ncols() != sigma_g.rows() {
            return Some(f64::INFINITY);
        }
        let worst = self
            .domain
            .samples(samples, seed, 0.0)
            .iter()
            .map(|x| (self.g(x).transpose() - w_g * sigma_g.eval(x)).amax())
            .fold(0.0, f64::max);
        Some(worst)
    }

    /// Copy of the system whose input map is `(1 + scale) g`.
    pub fn perturb_input_dynamics(&self, scale: f64) -> Result<Self> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::param("scale", "input-dynamics scale must be non-negative"));
        }
        let factor = 1.0 + scale;
        let mut out = self.clone();
        out.input_scale *= factor;
        out.w_g = out.w_g.map(|w| w * factor);
        Ok(out)
    }
}

impl InputMap for DynamicalSystem {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.g(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn quadrotor_drift_vanishes_at_zero_rates() {
        let sys = DynamicalSystem::quadrotor([4.856e-3, 4.856e-3, 8.801e-3]).unwrap();
        let f = sys.drift(&v(&[1.5, 1.7, 1.8, 0.0, 0.0, 0.0]));
        assert!(f.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn linearization_of_example1() {
        let (a, b) = DynamicalSystem::example1().linearize_at_origin();
        // d/dx2 of -0.5 x2 (1 - 9) = 4
        let expected = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -0.5, 4.0]);
        assert!((a - expected).amax() < 1e-6);
        assert_eq!(b, DMatrix::from_column_slice(2, 1, &[0.0, 3.0]));
    }

    #[test]
    fn nonpositive_inertia_rejected() {
        assert!(DynamicalSystem::quadrotor([1.0, 0.0, 1.0]).is_err());
        assert!(DynamicalSystem::quadrotor([1.0, 1.0, -2.0]).is_err());
    }

    #[test]
    fn negative_uncertainty_rejected() {
        assert!(DynamicalSystem::example1().perturb_input_dynamics(-0.1).is_err());
    }
}
