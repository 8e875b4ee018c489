//! Basis families for the value function, state penalty, input map and policy,
//! with exact gradients.

pub mod expr;
mod positivity;
mod wu_map;

use nalgebra::{DMatrix, DVector};

pub use expr::{Factor, Term};
pub use positivity::{
    check_pd_value, check_pd_value_sampled, check_psd_state_cost, check_psd_state_cost_sampled,
    PositivityCheck, PositivityChecker, DEFAULT_POSITIVITY_SAMPLES,
};
pub use wu_map::WuMap;

use crate::domain::Domain;
use crate::error::{Error, Result};

/// Ordered list of scalar basis functions.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisVector {
    terms: Vec<Term>,
}

impl BasisVector {
    pub fn new(terms: Vec<Term>) -> Self {
        BasisVector { terms }
    }

    pub fn parse(src: &str, state_dim: usize) -> Result<Self> {
        Ok(BasisVector::new(expr::parse_terms(src, state_dim)?))
    }

    /// `x1, ..., xn`.
    pub fn linear(n: usize) -> Self {
        BasisVector::new((0..n).map(|i| Term::monomial(1.0, &[(i, 1)])).collect())
    }

    /// All products `x_i x_j` with `i <= j`, row-major over the upper triangle.
    /// Off-diagonal terms carry `cross_coeff` (use 2.0 for `x^T P x` weights).
    pub fn quadratic(n: usize, cross_coeff: f64) -> Self {
        let mut terms = Vec::new();
        for i in 0..n {
            for j in i..n {
                terms.push(if i == j {
                    Term::monomial(1.0, &[(i, 2)])
                } else {
                    Term::monomial(cross_coeff, &[(i, 1), (j, 1)])
                });
            }
        }
        BasisVector::new(terms)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let xs = x.as_slice();
        DVector::from_iterator(self.terms.len(), self.terms.iter().map(|t| t.eval(xs)))
    }

    /// `weights . sigma(x)`.
    pub fn dot(&self, weights: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let xs = x.as_slice();
        self.terms
            .iter()
            .zip(weights.iter())
            .map(|(t, w)| w * t.eval(xs))
            .sum()
    }

    /// Jacobian with one row per basis function (`L x n`).
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let mut jac = DMatrix::zeros(self.terms.len(), n);
        let mut row = vec![0.0; n];
        for (i, t) in self.terms.iter().enumerate() {
            row.iter_mut().for_each(|v| *v = 0.0);
            t.accumulate_gradient(x.as_slice(), 1.0, &mut row);
            for (j, v) in row.iter().enumerate() {
                jac[(i, j)] = *v;
            }
        }
        jac
    }

    /// `grad(weights . sigma)(x)` as an `n`-vector.
    pub fn weighted_gradient(&self, weights: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for (t, w) in self.terms.iter().zip(weights.iter()) {
            t.accumulate_gradient(x.as_slice(), *w, g.as_mut_slice());
        }
        g
    }

    /// Symmetric `P` with `weights . sigma(x) = x^T P x`, when every term is a
    /// pure quadratic monomial.
    pub fn quadratic_form(&self, weights: &DVector<f64>, n: usize) -> Option<DMatrix<f64>> {
        let mut p = DMatrix::zeros(n, n);
        for (t, w) in self.terms.iter().zip(weights.iter()) {
            let (i, j, c) = t.as_quadratic(n)?;
            if i == j {
                p[(i, i)] += w * c;
            } else {
                p[(i, j)] += 0.5 * w * c;
                p[(j, i)] += 0.5 * w * c;
            }
        }
        Some(p)
    }

    pub fn is_quadratic(&self, n: usize) -> bool {
        self.terms.iter().all(|t| t.as_quadratic(n).is_some())
    }

    /// Least-squares weights reproducing `x^T P x` on domain samples.
    pub fn weights_for_quadratic(
        &self,
        p: &DMatrix<f64>,
        domain: &Domain,
        seed: u64,
    ) -> Result<DVector<f64>> {
        let pts = domain.samples((20 * self.len()).max(50), seed, 0.0);
        let a = DMatrix::from_fn(pts.len(), self.len(), |r, c| {
            self.terms[c].eval(pts[r].as_slice())
        });
        let b = DVector::from_iterator(pts.len(), pts.iter().map(|x| (x.transpose() * p * x)[0]));
        let w = crate::linalg::lstsq(&a, &b, 1e-12)?;
        let resid = (&a * &w - &b).amax();
        if resid > 1e-8 * b.amax().max(1.0) {
            return Err(Error::InvalidBasis {
                family: "quadratic",
                reason: format!("basis cannot represent x^T P x (residual {resid:e})"),
            });
        }
        Ok(w)
    }

    /// Index and coefficient of the term equal to `c * x_i`, for each state `i`.
    pub fn linear_terms(&self, n: usize) -> Option<Vec<(usize, f64)>> {
        (0..n)
            .map(|i| {
                self.terms.iter().enumerate().find_map(|(k, t)| match t.as_linear(n) {
                    Some((var, c)) if var == i && c != 0.0 => Some((k, c)),
                    _ => None,
                })
            })
            .collect()
    }

    fn max_var(&self) -> Option<usize> {
        self.terms.iter().filter_map(Term::max_var).max()
    }
}

impl std::fmt::Display for BasisVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Matrix-valued basis (`rows x cols`), stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Term>,
}

impl BasisMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Term>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension {
                context: "basis matrix entries",
                expected: rows * cols,
                actual: entries.len(),
            });
        }
        Ok(BasisMatrix {
            rows,
            cols,
            entries,
        })
    }

    /// Rows separated by `;`, entries by `,`.
    pub fn parse(src: &str, state_dim: usize) -> Result<Self> {
        let mut entries = Vec::new();
        let mut cols = None;
        let rows = expr::split_items(src, ';');
        for (off, row) in &rows {
            let terms = expr::parse_terms(row, state_dim).map_err(|e| match e {
                Error::BasisParse { column, message } => Error::BasisParse {
                    column: column + off,
                    message,
                },
                other => other,
            })?;
            match cols {
                None => cols = Some(terms.len()),
                Some(c) if c != terms.len() => {
                    return Err(Error::BasisParse {
                        column: off + 1,
                        message: format!("row has {} entries, expected {c}", terms.len()),
                    })
                }
                _ => {}
            }
            entries.extend(terms);
        }
        let cols = cols.unwrap_or(0);
        if cols != state_dim {
            return Err(Error::BasisParse {
                column: 1,
                message: format!("input-map basis needs {state_dim} columns, found {cols}"),
            });
        }
        BasisMatrix::new(rows.len(), cols, entries)
    }

    pub fn identity(n: usize) -> Self {
        let entries = (0..n * n)
            .map(|k| Term::constant(if k / n == k % n { 1.0 } else { 0.0 }))
            .collect();
        BasisMatrix {
            rows: n,
            cols: n,
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let xs = x.as_slice();
        DMatrix::from_fn(self.rows, self.cols, |r, c| {
            self.entries[r * self.cols + c].eval(xs)
        })
    }

    fn max_var(&self) -> Option<usize> {
        self.entries.iter().filter_map(Term::max_var).max()
    }
}

impl std::fmt::Display for BasisMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self.entries[r * self.cols + c])?;
            }
        }
        Ok(())
    }
}

/// The four basis families used by the estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    pub state_dim: usize,
    /// Value-function basis.
    pub sigma_v: BasisVector,
    /// State-penalty basis.
    pub sigma_q: BasisVector,
    /// Input-map basis, `L_g x n`.
    pub sigma_g: BasisMatrix,
    /// Policy basis.
    pub sigma_u: BasisVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Value,
    ValueGradient,
    StatePenalty,
    InputMap,
    Policy,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BasisValue {
    Vector(DVector<f64>),
    Matrix(DMatrix<f64>),
}

impl BasisSet {
    pub fn new(
        state_dim: usize,
        sigma_v: BasisVector,
        sigma_q: BasisVector,
        sigma_g: BasisMatrix,
        sigma_u: BasisVector,
    ) -> Result<Self> {
        let families: [(&'static str, usize, Option<usize>); 4] = [
            ("sigma_v", sigma_v.len(), sigma_v.max_var()),
            ("sigma_q", sigma_q.len(), sigma_q.max_var()),
            ("sigma_g", sigma_g.rows(), sigma_g.max_var()),
            ("sigma_u", sigma_u.len(), sigma_u.max_var()),
        ];
        for (family, len, max_var) in families {
            if len == 0 {
                return Err(Error::InvalidBasis {
                    family,
                    reason: "basis is empty".into(),
                });
            }
            if max_var.is_some_and(|v| v >= state_dim) {
                return Err(Error::InvalidBasis {
                    family,
                    reason: format!("references a variable beyond x{state_dim}"),
                });
            }
        }
        if sigma_g.cols() != state_dim {
            return Err(Error::Dimension {
                context: "sigma_g columns",
                expected: state_dim,
                actual: sigma_g.cols(),
            });
        }
        Ok(BasisSet {
            state_dim,
            sigma_v,
            sigma_q,
            sigma_g,
            sigma_u,
        })
    }

    pub fn l_v(&self) -> usize {
        self.sigma_v.len()
    }

    pub fn l_q(&self) -> usize {
        self.sigma_q.len()
    }

    pub fn l_g(&self) -> usize {
        self.sigma_g.rows()
    }

    pub fn l_u(&self) -> usize {
        self.sigma_u.len()
    }

    /// Checks finiteness on the domain and that `sigma_u` has a full-rank Gram matrix.
    pub fn validate_on(&self, domain: &Domain, seed: u64) -> Result<()> {
        let pts = domain.samples(10 * self.l_u().max(1), seed, 0.0);
        for x in &pts {
            for family in [
                Family::Value,
                Family::ValueGradient,
                Family::StatePenalty,
                Family::InputMap,
                Family::Policy,
            ] {
                eval_basis(self, family, x)?;
            }
        }
        let phi = DMatrix::from_fn(pts.len(), self.l_u(), |r, c| {
            self.sigma_u.terms()[c].eval(pts[r].as_slice())
        });
        let gram = phi.transpose() * &phi;
        let (rank, _) = crate::linalg::rank_and_sigma_min(&gram);
        if rank < self.l_u() {
            return Err(Error::InvalidBasis {
                family: "sigma_u",
                reason: format!(
                    "terms must be distinct and non-zero (Gram rank {rank} of {})",
                    self.l_u()
                ),
            });
        }
        Ok(())
    }
}

/// Evaluates one basis family at `x`.
pub fn eval_basis(basis: &BasisSet, family: Family, x: &DVector<f64>) -> Result<BasisValue> {
    if x.len() != basis.state_dim {
        return Err(Error::Dimension {
            context: "eval_basis state",
            expected: basis.state_dim,
            actual: x.len(),
        });
    }
    let (value, name) = match family {
        Family::Value => (BasisValue::Vector(basis.sigma_v.eval(x)), "sigma_v"),
        Family::ValueGradient => (BasisValue::Matrix(basis.sigma_v.jacobian(x)), "grad sigma_v"),
        Family::StatePenalty => (BasisValue::Vector(basis.sigma_q.eval(x)), "sigma_q"),
        Family::InputMap => (BasisValue::Matrix(basis.sigma_g.eval(x)), "sigma_g"),
        Family::Policy => (BasisValue::Vector(basis.sigma_u.eval(x)), "sigma_u"),
    };
    let finite = match &value {
        BasisValue::Vector(v) => v.iter().all(|a| a.is_finite()),
        BasisValue::Matrix(m) => m.iter().all(|a| a.is_finite()),
    };
    if finite {
        Ok(value)
    } else {
        Err(Error::NonFinite(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::builtin_basis;
    use crate::sim::BuiltinSystem;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn example1_value_basis_at_two_two() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let BasisValue::Vector(s) = eval_basis(&b, Family::Value, &v(&[2.0, 2.0])).unwrap() else {
            panic!()
        };
        assert_eq!(s, v(&[4.0, 4.0, 4.0]));
    }

    #[test]
    fn example1_value_gradient_at_unit_x1() {
        let b = builtin_basis(BuiltinSystem::Example1);
        let BasisValue::Matrix(g) =
            eval_basis(&b, Family::ValueGradient, &v(&[1.0, 0.0])).unwrap()
        else {
            panic!()
        };
        assert_eq!(g, DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn monomial_penalty_vanishes_at_origin() {
        for sys in [BuiltinSystem::Example1, BuiltinSystem::QuadrotorRot, BuiltinSystem::Linear2d] {
            let b = builtin_basis(sys);
            let BasisValue::Vector(q) =
                eval_basis(&b, Family::StatePenalty, &DVector::zeros(b.state_dim)).unwrap()
            else {
                panic!()
            };
            assert!(q.iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn duplicate_policy_terms_fail_gram_check() {
        let n = 2;
        let b = BasisSet::new(
            n,
            BasisVector::quadratic(n, 1.0),
            BasisVector::quadratic(n, 2.0),
            BasisMatrix::identity(n),
            BasisVector::parse("x1, x2, 2*x2", n).unwrap(),
        )
        .unwrap();
        let err = b.validate_on(&Domain::symmetric(&[1.0, 1.0]), 1).unwrap_err();
        assert!(matches!(err, Error::InvalidBasis { family: "sigma_u", .. }));
    }

    #[test]
    fn quadratic_form_recovers_matrix() {
        let b = BasisVector::quadratic(2, 2.0);
        let p = b.quadratic_form(&v(&[1.0, 0.5, 3.0]), 2).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 3.0]));
        let w = b
            .weights_for_quadratic(&p, &Domain::symmetric(&[1.0, 1.0]), 4)
            .unwrap();
        assert!((w - v(&[1.0, 0.5, 3.0])).amax() < 1e-10);
    }

    #[test]
    fn input_map_basis_parses_rows() {
        let m = BasisMatrix::parse("1, 0; 0, 1; 0, cos(2*x1)", 2).unwrap();
        assert_eq!(m.rows(), 3);
        let e = m.eval(&v(&[0.0, 5.0]));
        assert_eq!(e, DMatrix::from_row_slice(3, 2, &[1., 0., 0., 1., 0., 1.]));
        assert!(BasisMatrix::parse("1, 0; 0", 2).is_err());
    }
}
