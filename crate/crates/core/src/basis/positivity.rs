use nalgebra::{DMatrix, DVector};

use super::{BasisSet, BasisVector};
use crate::domain::Domain;

pub const DEFAULT_POSITIVITY_SAMPLES: usize = 2000;
const ORIGIN_EXCLUSION: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct PositivityCheck {
    pub ok: bool,
    /// A domain point where the function is non-positive (or negative, for semidefinite checks).
    pub witness: Option<DVector<f64>>,
}

impl PositivityCheck {
    fn pass() -> Self {
        PositivityCheck {
            ok: true,
            witness: None,
        }
    }

    fn fail(x: DVector<f64>) -> Self {
        PositivityCheck {
            ok: false,
            witness: Some(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Strictness {
    Definite,
    Semidefinite,
}

/// Reusable positivity test for one basis family on one domain.
///
/// Purely quadratic families are tested exactly through the eigenvalues of the
/// equivalent symmetric matrix. Other families are evaluated on a fixed set of
/// seeded samples that is computed once.
#[derive(Clone, Debug)]
pub struct PositivityChecker {
    family: BasisVector,
    n: usize,
    strictness: Strictness,
    domain: Domain,
    at_origin: DVector<f64>,
    sampled: Option<(Vec<DVector<f64>>, DMatrix<f64>)>,
}

impl PositivityChecker {
    fn build(
        family: &BasisVector,
        domain: &Domain,
        samples: usize,
        seed: u64,
        strictness: Strictness,
        force_sampling: bool,
    ) -> Self {
        let n = domain.dim();
        let sampled = if force_sampling || !family.is_quadratic(n) {
            let pts = domain.samples(samples.max(1), seed, ORIGIN_EXCLUSION);
            let values =
                DMatrix::from_fn(pts.len(), family.len(), |r, c| family.terms()[c].eval(pts[r].as_slice()));
            Some((pts, values))
        } else {
            None
        };
        PositivityChecker {
            family: family.clone(),
            n,
            strictness,
            domain: domain.clone(),
            at_origin: family.eval(&DVector::zeros(n)),
            sampled,
        }
    }

    pub fn value(basis: &BasisSet, domain: &Domain, samples: usize, seed: u64) -> Self {
        Self::build(&basis.sigma_v, domain, samples, seed, Strictness::Definite, false)
    }

    pub fn state_cost(basis: &BasisSet, domain: &Domain, samples: usize, seed: u64) -> Self {
        Self::build(&basis.sigma_q, domain, samples, seed, Strictness::Semidefinite, false)
    }

    pub fn check(&self, weights: &DVector<f64>) -> PositivityCheck {
        let origin = weights.dot(&self.at_origin);
        if origin.abs() > 1e-12 {
            return PositivityCheck::fail(DVector::zeros(self.n));
        }
        match &self.sampled {
            Some((pts, values)) => {
                let v = values * weights;
                let bad = v.iter().position(|&val| match self.strictness {
                    Strictness::Definite => val <= 0.0,
                    Strictness::Semidefinite => val < 0.0,
                });
                match bad {
                    Some(i) => PositivityCheck::fail(pts[i].clone()),
                    None => PositivityCheck::pass(),
                }
            }
            None => {
                let p = self
                    .family
                    .quadratic_form(weights, self.n)
                    .expect("family checked quadratic");
                let eig = p.symmetric_eigen();
                let (idx, min) = eig
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc });
                let scale = eig.eigenvalues.amax().max(1.0);
                let ok = match self.strictness {
                    Strictness::Definite => min > 0.0,
                    Strictness::Semidefinite => min >= -1e-12 * scale,
                };
                if ok {
                    PositivityCheck::pass()
                } else {
                    let dir = eig.eigenvectors.column(idx).into_owned();
                    PositivityCheck::fail(self.fit_in_domain(dir))
                }
            }
        }
    }

    fn fit_in_domain(&self, dir: DVector<f64>) -> DVector<f64> {
        let t = dir
            .iter()
            .zip(self.domain.hi.iter().zip(self.domain.lo.iter()))
            .filter(|(d, _)| d.abs() > 1e-15)
            .map(|(d, (hi, lo))| hi.abs().min(lo.abs()) / d.abs())
            .fold(f64::INFINITY, f64::min);
        let t = if t.is_finite() { 0.5 * t } else { 1.0 };
        dir * t
    }
}

/// Whether `W_V . sigma_V` is positive definite on the domain.
pub fn check_pd_value(
    w_v: &DVector<f64>,
    basis: &BasisSet,
    domain: &Domain,
    samples: usize,
    seed: u64,
) -> PositivityCheck {
    PositivityChecker::value(basis, domain, samples, seed).check(w_v)
}

/// Sampling-only variant of [`check_pd_value`].
pub fn check_pd_value_sampled(
    w_v: &DVector<f64>,
    basis: &BasisSet,
    domain: &Domain,
    samples: usize,
    seed: u64,
) -> PositivityCheck {
    PositivityChecker::build(&basis.sigma_v, domain, samples, seed, Strictness::Definite, true)
        .check(w_v)
}

/// Whether `W_Q . sigma_Q` is positive semidefinite on the domain.
pub fn check_psd_state_cost(
    w_q: &DVector<f64>,
    basis: &BasisSet,
    domain: &Domain,
    samples: usize,
    seed: u64,
) -> PositivityCheck {
    PositivityChecker::state_cost(basis, domain, samples, seed).check(w_q)
}

pub fn check_psd_state_cost_sampled(
    w_q: &DVector<f64>,
    basis: &BasisSet,
    domain: &Domain,
    samples: usize,
    seed: u64,
) -> PositivityCheck {
    PositivityChecker::build(&basis.sigma_q, domain, samples, seed, Strictness::Semidefinite, true)
        .check(w_q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{builtin_basis, builtin_domain, BuiltinSystem};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn w(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn ex1() -> (BasisSet, Domain) {
        (
            builtin_basis(BuiltinSystem::Example1),
            builtin_domain(BuiltinSystem::Example1),
        )
    }

    #[test]
    fn true_value_weights_are_positive_definite() {
        let (b, d) = ex1();
        assert!(check_pd_value(&w(&[0.5, 0.0, 1.0]), &b, &d, 2000, 1).ok);
        assert!(check_pd_value_sampled(&w(&[0.5, 0.0, 1.0]), &b, &d, 2000, 1).ok);
    }

    #[test]
    fn negative_axis_weight_has_off_axis_witness() {
        let (b, d) = ex1();
        for check in [check_pd_value, check_pd_value_sampled] {
            let c = check(&w(&[-1.0, 0.0, 0.0]), &b, &d, 2000, 1);
            assert!(!c.ok);
            let x = c.witness.unwrap();
            assert!(x[0] != 0.0);
            assert!(b.sigma_v.dot(&w(&[-1.0, 0.0, 0.0]), &x) <= 0.0);
        }
    }

    #[test]
    fn indefinite_value_weights_rejected() {
        let (b, d) = ex1();
        assert!(!check_pd_value(&w(&[1.0, -3.0, 1.0]), &b, &d, 2000, 1).ok);
        assert!(!check_pd_value_sampled(&w(&[1.0, -3.0, 1.0]), &b, &d, 2000, 1).ok);
    }

    #[test]
    fn state_cost_semidefinite_cases() {
        let (b, d) = ex1();
        assert!(check_psd_state_cost(&w(&[0.5252, 0.1368, 0.8026]), &b, &d, 2000, 2).ok);
        assert!(check_psd_state_cost(&DVector::zeros(3), &b, &d, 2000, 2).ok);
        assert!(check_psd_state_cost_sampled(&DVector::zeros(3), &b, &d, 2000, 2).ok);
        assert!(!check_psd_state_cost(&w(&[1.0, 1.0, 0.5]), &b, &d, 2000, 2).ok);
        assert!(!check_psd_state_cost_sampled(&w(&[1.0, 1.0, 0.5]), &b, &d, 2000, 2).ok);
    }

    #[test]
    fn sampled_and_eigenvalue_paths_agree_on_quadratic_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for sys in [BuiltinSystem::Example1, BuiltinSystem::Linear2d] {
            let (b, d) = (builtin_basis(sys), builtin_domain(sys));
            for family in [&b.sigma_v, &b.sigma_q] {
                let mut tested = 0;
                while tested < 50 {
                    let w = DVector::from_fn(family.len(), |_, _| rng.random_range(-1.0..1.0));
                    let eig = family.quadratic_form(&w, 2).unwrap().symmetric_eigen().eigenvalues;
                    // skip weights too close to the boundary for sampling to resolve
                    if eig.amin() < 0.05 * eig.amax() {
                        continue;
                    }
                    let expected = eig.min() > 0.0;
                    let (exact, sampled) = if std::ptr::eq(family, &b.sigma_v) {
                        (
                            check_pd_value(&w, &b, &d, 2000, 9).ok,
                            check_pd_value_sampled(&w, &b, &d, 2000, 9).ok,
                        )
                    } else {
                        (
                            check_psd_state_cost(&w, &b, &d, 2000, 9).ok,
                            check_psd_state_cost_sampled(&w, &b, &d, 2000, 9).ok,
                        )
                    };
                    assert_eq!(exact, expected);
                    assert_eq!(sampled, expected);
                    tested += 1;
                }
            }
        }
    }
}
