use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::DynamicalSystem;
use crate::basis::{BasisMatrix, BasisSet, BasisVector, Term};
use crate::domain::Domain;
use crate::error::{Error, Result};

pub const QUADROTOR_INERTIA: [f64; 3] = [4.856e-3, 4.856e-3, 8.801e-3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BuiltinSystem {
    /// Two-state, single-input nonlinear system with a known quadratic value function.
    Example1,
    /// Quadrotor attitude dynamics (angles and body rates).
    QuadrotorRot,
    /// `A = diag(1, -2)`, `B = [1; 1]`.
    Linear2d,
}

impl BuiltinSystem {
    pub const ALL: [BuiltinSystem; 3] = [
        BuiltinSystem::Example1,
        BuiltinSystem::QuadrotorRot,
        BuiltinSystem::Linear2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinSystem::Example1 => "example1",
            BuiltinSystem::QuadrotorRot => "quadrotor_rot",
            BuiltinSystem::Linear2d => "linear2d",
        }
    }

    pub fn default_initial_state(self) -> DVector<f64> {
        match self {
            BuiltinSystem::Example1 => DVector::from_column_slice(&[2.0, 2.0]),
            BuiltinSystem::QuadrotorRot => {
                DVector::from_column_slice(&[1.5, 1.7, 1.8, 0.0, 0.0, 0.0])
            }
            BuiltinSystem::Linear2d => DVector::from_column_slice(&[-0.5, 0.5]),
        }
    }
}

impl fmt::Display for BuiltinSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BuiltinSystem::ALL
            .into_iter()
            .find(|b| b.name() == s.trim())
            .ok_or_else(|| Error::UnknownSystem(s.trim().to_string()))
    }
}

pub fn builtin_domain(sys: BuiltinSystem) -> Domain {
    match sys {
        BuiltinSystem::Example1 => Domain::symmetric(&[2.0, 2.0]),
        BuiltinSystem::QuadrotorRot => Domain::symmetric(&[2.0, 2.0, 2.0, 5.0, 5.0, 5.0]),
        BuiltinSystem::Linear2d => Domain::symmetric(&[1.0, 1.0]),
    }
}

/// Bases that span the true value, penalty and input map of each built-in system.
pub fn builtin_basis(sys: BuiltinSystem) -> BasisSet {
    let basis = match sys {
        BuiltinSystem::Example1 => BasisSet::new(
            2,
            BasisVector::quadratic(2, 1.0),
            BasisVector::quadratic(2, 2.0),
            BasisMatrix::parse("1, 0; 0, 1; 0, cos(2*x1)", 2).expect("static basis"),
            BasisVector::parse("x1, x2, x1*cos(2*x1), x2*cos(2*x1)", 2).expect("static basis"),
        ),
        BuiltinSystem::QuadrotorRot => {
            let mut terms: Vec<Term> = (0..6).map(|i| Term::monomial(1.0, &[(i, 2)])).collect();
            terms.extend((0..3).map(|i| Term::monomial(1.0, &[(i, 1), (i + 3, 1)])));
            BasisSet::new(
                6,
                BasisVector::new(terms),
                BasisVector::quadratic(6, 2.0),
                BasisMatrix::identity(6),
                BasisVector::linear(6),
            )
        }
        BuiltinSystem::Linear2d => BasisSet::new(
            2,
            BasisVector::quadratic(2, 1.0),
            BasisVector::quadratic(2, 2.0),
            BasisMatrix::identity(2),
            BasisVector::linear(2),
        ),
    };
    basis.expect("built-in bases are well formed")
}

/// Builds a registered system. Recognized overrides: `ixx`, `iyy`, `izz` for
/// the quadrotor; `a11`, `a12`, `a21`, `a22`, `b1`, `b2` for `linear2d`.
pub fn make_builtin_system(name: &str, params: &BTreeMap<String, f64>) -> Result<DynamicalSystem> {
    let sys: BuiltinSystem = name.parse()?;
    let allowed: &[&str] = match sys {
        BuiltinSystem::Example1 => &[],
        BuiltinSystem::QuadrotorRot => &["ixx", "iyy", "izz"],
        BuiltinSystem::Linear2d => &["a11", "a12", "a21", "a22", "b1", "b2"],
    };
    if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::param(bad.clone(), format!("not a parameter of {sys}")));
    }
    let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
    match sys {
        BuiltinSystem::Example1 => Ok(DynamicalSystem::example1()),
        BuiltinSystem::QuadrotorRot => DynamicalSystem::quadrotor([
            get("ixx", QUADROTOR_INERTIA[0]),
            get("iyy", QUADROTOR_INERTIA[1]),
            get("izz", QUADROTOR_INERTIA[2]),
        ]),
        BuiltinSystem::Linear2d => {
            let a = DMatrix::from_row_slice(
                2,
                2,
                &[get("a11", 1.0), get("a12", 0.0), get("a21", 0.0), get("a22", -2.0)],
            );
            let b = DMatrix::from_column_slice(2, 1, &[get("b1", 1.0), get("b2", 1.0)]);
            DynamicalSystem::linear("linear2d", a, b, builtin_domain(sys))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn sys(name: &str) -> DynamicalSystem {
        make_builtin_system(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn example1_input_map_at_origin() {
        assert_eq!(sys("example1").g(&v(&[0.0, 0.0])), DMatrix::from_column_slice(2, 1, &[0.0, 3.0]));
    }

    #[test]
    fn linear2d_drift() {
        assert_eq!(sys("linear2d").drift(&v(&[1.0, 1.0])), v(&[1.0, -2.0]));
    }

    #[test]
    fn unknown_names_and_parameters_rejected() {
        assert!(matches!(
            make_builtin_system("pendulum", &BTreeMap::new()),
            Err(Error::UnknownSystem(_))
        ));
        let mut p = BTreeMap::new();
        p.insert("ixx".to_string(), 1.0);
        assert!(make_builtin_system("example1", &p).is_err());
        p.insert("ixx".to_string(), -1.0);
        assert!(make_builtin_system("quadrotor_rot", &p).is_err());
    }

    #[test]
    fn parametric_input_map_reconstructs_g() {
        for b in BuiltinSystem::ALL {
            let s = sys(b.name());
            let err = s.input_weight_error(&builtin_basis(b).sigma_g, 1000, 3).unwrap();
            assert!(err <= 1e-8, "{b}: {err}");
        }
    }

    #[test]
    fn uncertainty_scales_input_map() {
        let lin = sys("linear2d").perturb_input_dynamics(0.1).unwrap();
        let (_, b) = lin.linear_matrices().unwrap();
        assert!((b - DMatrix::from_column_slice(2, 1, &[1.1, 1.1])).amax() < 1e-15);
        let ex = sys("example1").perturb_input_dynamics(0.05).unwrap();
        assert!((ex.g(&v(&[0.0, 0.0]))[1] - 3.15).abs() < 1e-14);
        let same = sys("example1").perturb_input_dynamics(0.0).unwrap();
        assert_eq!(same.g(&v(&[0.7, -0.2])), sys("example1").g(&v(&[0.7, -0.2])));
        assert!(
            ex.input_weight_error(&builtin_basis(BuiltinSystem::Example1).sigma_g, 200, 1).unwrap()
                < 1e-8
        );
    }
}
