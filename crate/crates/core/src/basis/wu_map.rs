use nalgebra::{DMatrix, DVector};

use super::BasisSet;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::linalg;

const FIT_SEED: u64 = 0x5EED_0001;
const CHECK_SEED: u64 = 0x5EED_0002;
const EXACTNESS_TOL: f64 = 1e-10;

/// Linear map from value weights to the policy-basis gain matrix.
///
/// Satisfies `sigma_g(x) grad(sigma_v)(x)^T w = apply(w) sigma_u(x)` for every
/// state and every weight vector.
#[derive(Clone, Debug, PartialEq)]
pub struct WuMap {
    /// One `L_g x L_u` slice per value weight.
    slices: Vec<DMatrix<f64>>,
}

impl WuMap {
    /// Fits each product `sigma_g (grad sigma_v)^T e_k` onto `sigma_u` by least
    /// squares on domain samples, then verifies exactness on fresh points.
    pub fn build(basis: &BasisSet, domain: &Domain) -> Result<Self> {
        let (l_g, l_u, l_v) = (basis.l_g(), basis.l_u(), basis.l_v());
        let fit_pts = domain.samples((10 * l_u).max(40), FIT_SEED, 0.0);
        let phi = DMatrix::from_fn(fit_pts.len(), l_u, |r, c| {
            basis.sigma_u.terms()[c].eval(fit_pts[r].as_slice())
        });
        let (phi_pinv, rank) = linalg::pinv(&phi, 1e-12);
        if rank < l_u {
            return Err(Error::InvalidBasis {
                family: "sigma_u",
                reason: format!("policy basis is degenerate on the domain (rank {rank} of {l_u})"),
            });
        }

        // products[k] is N x L_g: row r = (sigma_g grad_sigma_v^T e_k)(x_r)^T
        let mut products = vec![DMatrix::zeros(fit_pts.len(), l_g); l_v];
        for (r, x) in fit_pts.iter().enumerate() {
            let sg = basis.sigma_g.eval(x);
            let jac = basis.sigma_v.jacobian(x);
            for (k, prod) in products.iter_mut().enumerate() {
                let h = &sg * jac.row(k).transpose();
                prod.row_mut(r).copy_from(&h.transpose());
            }
        }
        let mut slices = Vec::with_capacity(l_v);
        for prod in &products {
            // (L_u x N)(N x L_g) -> transpose to L_g x L_u
            let mut a = (&phi_pinv * prod).transpose();
            let scale = linalg::max_abs(&a).max(1.0);
            a.iter_mut().for_each(|v| {
                if v.abs() < 1e-11 * scale {
                    *v = 0.0;
                }
            });
            slices.push(a);
        }
        let map = WuMap { slices };
        map.verify(basis, domain)?;
        Ok(map)
    }

    fn verify(&self, basis: &BasisSet, domain: &Domain) -> Result<()> {
        let pts = domain.samples((10 * basis.l_u()).max(40), CHECK_SEED, 0.0);
        let mut worst = (0usize, 0usize, 0.0f64);
        for x in &pts {
            let sg = basis.sigma_g.eval(x);
            let jac = basis.sigma_v.jacobian(x);
            let su = basis.sigma_u.eval(x);
            for (k, slice) in self.slices.iter().enumerate() {
                let h = &sg * jac.row(k).transpose();
                let fit = slice * &su;
                for i in 0..h.len() {
                    let err = (h[i] - fit[i]).abs() / h[i].abs().max(1.0);
                    if err > worst.2 {
                        worst = (k, i, err);
                    }
                }
            }
        }
        if worst.2 > EXACTNESS_TOL {
            return Err(Error::WuMapResidual {
                value_index: worst.0,
                row: worst.1,
                residual: worst.2,
            });
        }
        Ok(())
    }

    pub fn value_dim(&self) -> usize {
        self.slices.len()
    }

    /// Gain-matrix representation `W_u` of the value weights.
    pub fn apply(&self, w_v: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.slices[0].nrows(), self.slices[0].ncols());
        for (slice, w) in self.slices.iter().zip(w_v.iter()) {
            if *w != 0.0 {
                out += slice * *w;
            }
        }
        out
    }

    /// Coefficient `A_ijk`.
    pub fn coefficient(&self, i: usize, j: usize, k: usize) -> f64 {
        self.slices[k][(i, j)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisMatrix, BasisVector};
    use crate::sim::{builtin_basis, builtin_domain, BuiltinSystem};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example1() -> (BasisSet, Domain) {
        (
            builtin_basis(BuiltinSystem::Example1),
            builtin_domain(BuiltinSystem::Example1),
        )
    }

    #[test]
    fn example1_true_value_weights() {
        let (b, d) = example1();
        let map = WuMap::build(&b, &d).unwrap();
        let wu = map.apply(&DVector::from_column_slice(&[0.5, 0.0, 1.0]));
        let expected =
            DMatrix::from_row_slice(3, 4, &[1., 0., 0., 0., 0., 2., 0., 0., 0., 0., 0., 2.]);
        assert!((wu - expected).amax() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_gain() {
        let (b, d) = example1();
        let map = WuMap::build(&b, &d).unwrap();
        assert_eq!(map.apply(&DVector::zeros(3)), DMatrix::zeros(3, 4));
    }

    #[test]
    fn linearity_and_defining_identity_on_fresh_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for sys in [BuiltinSystem::Example1, BuiltinSystem::QuadrotorRot, BuiltinSystem::Linear2d] {
            let b = builtin_basis(sys);
            let d = builtin_domain(sys);
            let map = WuMap::build(&b, &d).unwrap();
            for _ in 0..20 {
                let w1 = DVector::from_fn(b.l_v(), |_, _| rng.random_range(-1.0..1.0));
                let w2 = DVector::from_fn(b.l_v(), |_, _| rng.random_range(-1.0..1.0));
                let (a, c) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let lhs = map.apply(&(&w1 * a + &w2 * c));
                let rhs = map.apply(&w1) * a + map.apply(&w2) * c;
                assert!((lhs - rhs).amax() < 1e-12);

                let x = d.sample(&mut rng);
                let direct = b.sigma_g.eval(&x) * b.sigma_v.jacobian(&x).transpose() * &w1;
                let via_map = map.apply(&w1) * b.sigma_u.eval(&x);
                assert!((direct - via_map).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn deficient_policy_basis_reports_worst_component() {
        let (b, d) = example1();
        let short = BasisSet::new(
            2,
            b.sigma_v.clone(),
            b.sigma_q.clone(),
            BasisMatrix::parse("1, 0; 0, 1; 0, cos(2*x1)", 2).unwrap(),
            BasisVector::parse("x1, x2", 2).unwrap(),
        )
        .unwrap();
        match WuMap::build(&short, &d) {
            Err(Error::WuMapResidual { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected residual error, got {other:?}"),
        }
    }
}
