use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisVector;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyDistance {
    /// `max_x |(K_a - K_b) sigma_u(x)|_inf` over the grid.
    pub max_deviation: f64,
    /// `|K_a - K_b|_F / |K_b|_F`.
    pub normalized_gain_error: f64,
}

pub fn policy_distance(
    k_a: &DMatrix<f64>,
    k_b: &DMatrix<f64>,
    sigma_u: &BasisVector,
    grid: &[DVector<f64>],
) -> Result<PolicyDistance> {
    if k_a.shape() != k_b.shape() {
        return Err(Error::Dimension {
            context: "gain shapes",
            expected: k_b.len(),
            actual: k_a.len(),
        });
    }
    let diff = k_a - k_b;
    let zero = DVector::zeros(diff.nrows());
    let max_deviation =
        max_policy_deviation(grid, |x| &diff * sigma_u.eval(x), |_| zero.clone())?;
    Ok(PolicyDistance {
        max_deviation,
        normalized_gain_error: normalized_gain_error(k_a, k_b),
    })
}

pub fn normalized_gain_error(k_a: &DMatrix<f64>, k_b: &DMatrix<f64>) -> f64 {
    let num = (k_a - k_b).norm();
    let den = k_b.norm();
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// `max_x |u_a(x) - u_b(x)|_inf` over the grid, for arbitrary policies.
pub fn max_policy_deviation<A, B>(grid: &[DVector<f64>], u_a: A, u_b: B) -> Result<f64>
where
    A: Fn(&DVector<f64>) -> DVector<f64>,
    B: Fn(&DVector<f64>) -> DVector<f64>,
{
    if grid.is_empty() {
        return Err(Error::DegenerateData("evaluation grid is empty".into()));
    }
    Ok(grid
        .iter()
        .map(|x| (u_a(x) - u_b(x)).amax())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{builtin_basis, BuiltinSystem};

    fn k(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn identical_gains_have_zero_distance() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let grid = crate::sim::builtin_domain(BuiltinSystem::Example1).grid(5);
        let d = policy_distance(&k(&[0.0, 2.0, 0.0, 1.0]), &k(&[0.0, 2.0, 0.0, 1.0]), &b.sigma_u, &grid)
            .unwrap();
        assert_eq!(d.max_deviation, 0.0);
        assert_eq!(d.normalized_gain_error, 0.0);
    }

    #[test]
    fn deviation_at_grid_corner() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let grid = vec![DVector::from_column_slice(&[2.0, 2.0])];
        let d = policy_distance(&k(&[0.0, 2.0, 0.0, 1.0]), &DMatrix::zeros(1, 4), &b.sigma_u, &grid).unwrap();
        // (2 + cos 4) * 2
        assert!((d.max_deviation - 2.6928).abs() < 1e-4);
        assert!((d.max_deviation - (2.0 + 4f64.cos()) * 2.0).abs() < 1e-12);
    }

    #[test]
    fn published_verification_gain_is_close() {
        let e = normalized_gain_error(&k(&[-0.0003, 1.0003, -0.0001, 0.5002]), &k(&[0.0, 1.0, 0.0, 0.5]));
        assert!(e <= 1e-3, "{e}");
    }

    #[test]
    fn empty_grid_rejected() {
        let b = builtin_basis(BuiltinSystem::Example1);
        assert!(policy_distance(&k(&[0.0; 4]), &k(&[0.0; 4]), &b.sigma_u, &[]).is_err());
    }
}
