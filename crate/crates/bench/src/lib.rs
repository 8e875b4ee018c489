//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use ioc_core::basis::BasisSet;
use ioc_core::sim::{builtin_basis, make_builtin_system, simulate, BuiltinSystem, ControlLaw, DynamicalSystem, Trajectory};
use nalgebra::{DMatrix, DVector};

pub struct Fixture {
    pub sys: DynamicalSystem,
    pub basis: BasisSet,
    pub expert_gain: DMatrix<f64>,
    pub expert: Trajectory,
}

/// Example-1 system under its optimal gain from `x0 = (2, 2)`.
pub fn example1(duration: f64) -> Fixture {
    let sys = make_builtin_system("example1", &BTreeMap::new()).expect("builtin");
    let basis = builtin_basis(BuiltinSystem::Example1);
    let expert_gain = DMatrix::from_row_slice(1, 4, &[0.0, 2.0, 0.0, 1.0]);
    let law = ControlLaw::gain(expert_gain.clone(), basis.sigma_u.clone());
    let expert = simulate(&sys, &law, &DVector::from_column_slice(&[2.0, 2.0]), 1e-3, duration).expect("simulation");
    Fixture {
        sys,
        basis,
        expert_gain,
        expert,
    }
}
