use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution {
    /// Stabilizing solution of the continuous algebraic Riccati equation.
    pub p: DMatrix<f64>,
    /// `R^-1 B^T P`.
    pub k: DMatrix<f64>,
    /// `|A^T P + P A - P B R^-1 B^T P + Q|_inf`.
    pub residual: f64,
}

/// Stabilizing solution of `A^T P + P A - P B R^-1 B^T P + Q = 0`.
///
/// Matrix-sign-function method on the Hamiltonian, followed by two
/// Newton-Kleinman refinement steps.
pub fn solve_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    let m = b.ncols();
    check_dims(a, b, q, r)?;
    let r_inv = linalg::spd_inverse(r, "R")?;
    let s = b * &r_inv * b.transpose();

    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&-&s);
    h.view_mut((n, 0), (n, n)).copy_from(&-q);
    h.view_mut((n, n), (n, n)).copy_from(&-a.transpose());

    let w = matrix_sign(h)?;
    let eye = DMatrix::<f64>::identity(n, n);
    // stable invariant subspace: (W + I) [I; P] = 0
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&-(w.view((0, 0), (n, n)) + &eye));
    rhs.view_mut((n, 0), (n, n)).copy_from(&-w.view((n, 0), (n, n)));
    let (lhs_pinv, rank) = linalg::pinv(&lhs, 1e-10);
    if rank < n {
        return Err(Error::NotStabilizable);
    }
    let mut p = &lhs_pinv * rhs;
    p = (&p + p.transpose()) * 0.5;

    for _ in 0..2 {
        let k = &r_inv * b.transpose() * &p;
        let ac = a - b * &k;
        if !is_hurwitz(&ac) {
            return Err(Error::NotStabilizable);
        }
        let rhs = q + k.transpose() * r * &k;
        p = lyapunov(&ac, &rhs)?;
    }

    let k = &r_inv * b.transpose() * &p;
    if !is_hurwitz(&(a - b * &k)) {
        return Err(Error::NotStabilizable);
    }
    let residual = riccati_residual(a, b, q, &r_inv, &p);
    let scale = [a, q, &p, &s].iter().map(|x| x.amax()).fold(1.0, f64::max);
    if !(residual <= RESIDUAL_TOL * scale * scale) {
        return Err(Error::RiccatiResidual(residual));
    }
    debug_assert_eq!(k.shape(), (m, n));
    Ok(RiccatiSolution { p, k, residual })
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let checks = [
        ("A columns", n, a.ncols()),
        ("B rows", n, b.nrows()),
        ("Q rows", n, q.nrows()),
        ("Q columns", n, q.ncols()),
        ("R rows", b.ncols(), r.nrows()),
        ("R columns", b.ncols(), r.ncols()),
    ];
    for (context, expected, actual) in checks {
        if expected != actual {
            return Err(Error::Dimension {
                context,
                expected,
                actual,
            });
        }
    }
    Ok(())
}

fn riccati_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let res = a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q;
    res.amax()
}

/// Newton iteration with determinant scaling for `sign(H)`.
fn matrix_sign(mut z: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = z.nrows() as f64;
    for _ in 0..100 {
        let inv = z.clone().try_inverse().ok_or(Error::NotStabilizable)?;
        let det = z.determinant().abs();
        let c = if det.is_finite() && det > 0.0 {
            det.powf(1.0 / dim)
        } else {
            1.0
        };
        let next = (&z / c + inv * c) * 0.5;
        let delta = (&next - &z).norm() / next.norm().max(1.0);
        z = next;
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NotStabilizable);
        }
        if delta < 1e-13 {
            return Ok(z);
        }
    }
    Err(Error::IterationCap("matrix sign iteration", 100))
}

/// Solves `Ac^T P + P Ac + M = 0` through the Kronecker form.
pub fn lyapunov(ac: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = ac.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = ac.transpose();
    let big = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, m.iter().map(|v| -v));
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("Lyapunov operator"))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    m.complex_eigenvalues().iter().all(|l| l.re < 0.0)
}
