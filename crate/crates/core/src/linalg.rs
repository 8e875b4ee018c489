//! Small dense linear-algebra and quadrature helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for pseudoinverses of the input-map gain matrix.
pub const PINV_RELATIVE_TOL: f64 = 1e-8;

/// Moore-Penrose pseudoinverse with singular values below `rel_tol * sigma_max` truncated.
///
/// Returns the pseudoinverse together with the number of retained singular values.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(cols, rows), 0);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s_max = svd.singular_values.max();
    let cutoff = rel_tol * s_max;
    let mut out = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            let vi = v_t.row(i).transpose();
            let ui = u.column(i);
            out += (vi * ui.transpose()) / s;
        }
    }
    (out, rank)
}

/// Symmetrize and floor the eigenvalues of `m` at `floor`.
pub fn project_spd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= floor {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&clamped) * q.transpose();
    (&out + out.transpose()) * 0.5
}

pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::NotPositive(what))
}

/// Least-squares solution of `a x = b` with column equilibration.
///
/// Fails with [`Error::RankDeficient`] when the scaled matrix has a
/// singular-value ratio below `rcond`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Result<DVector<f64>> {
    let cols = a.ncols();
    let scale: Vec<f64> = (0..cols)
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (j, s) in scale.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }
    let svd = scaled.svd(true, true);
    let s_max = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > rcond * s_max)
        .count();
    if rank < cols || a.nrows() < cols {
        return Err(Error::RankDeficient { rank, cols });
    }
    let y = svd
        .solve(b, 0.0)
        .map_err(|_| Error::RankDeficient { rank, cols })?;
    Ok(DVector::from_iterator(
        cols,
        y.iter().zip(scale.iter()).map(|(v, s)| v / s),
    ))
}

/// Numerical rank and smallest singular value of `m`.
///
/// The smallest singular value counts structurally missing ones: a matrix
/// with fewer rows than columns reports zero.
pub fn rank_and_sigma_min(m: &DMatrix<f64>) -> (usize, f64) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (0, 0.0);
    }
    let sv = m.clone().singular_values();
    let s_max = sv.max();
    let tol = (rows.max(cols) as f64) * f64::EPSILON * s_max;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let sigma_min = if rows < cols { 0.0 } else { sv.min() };
    (rank, sigma_min)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrature {
    Trapezoid,
    /// Composite Simpson; an odd interval count finishes with the 3/8 rule.
    Simpson,
}

/// Weights for integrating samples on a uniform grid with `intervals` steps of `dt`.
pub fn quadrature_weights(rule: Quadrature, intervals: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![0.0; intervals + 1];
    if intervals == 0 {
        return w;
    }
    match rule {
        Quadrature::Trapezoid => {
            for wi in w.iter_mut() {
                *wi = dt;
            }
            w[0] = 0.5 * dt;
            w[intervals] = 0.5 * dt;
        }
        Quadrature::Simpson => {
            if intervals < 2 {
                return quadrature_weights(Quadrature::Trapezoid, intervals, dt);
            }
            let (simpson_len, tail) = if intervals.is_multiple_of(2) {
                (intervals, 0)
            } else if intervals >= 3 {
                (intervals - 3, 3)
            } else {
                (0, intervals)
            };
            let h3 = dt / 3.0;
            let mut i = 0;
            while i + 2 <= simpson_len {
                w[i] += h3;
                w[i + 1] += 4.0 * h3;
                w[i + 2] += h3;
                i += 2;
            }
            if tail == 3 {
                let c = 3.0 * dt / 8.0;
                let s = simpson_len;
                w[s] += c;
                w[s + 1] += 3.0 * c;
                w[s + 2] += 3.0 * c;
                w[s + 3] += c;
            }
        }
    }
    w
}

/// SplitMix64 finalizer applied to a (master, stream) pair.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_of_wide_full_row_rank_is_right_inverse() {
        let m = DMatrix::from_row_slice(3, 4, &[1., 0., 0., 0., 0., 2., 0., 0., 0., 0., 0., 2.]);
        let (p, rank) = pinv(&m, PINV_RELATIVE_TOL);
        assert_eq!(rank, 3);
        assert_relative_eq!(&m * &p, DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn pinv_truncates_tiny_singular_values() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-12]);
        let (_, rank) = pinv(&m, PINV_RELATIVE_TOL);
        assert_eq!(rank, 1);
    }

    #[test]
    fn projection_floors_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let p = project_spd(&m, 1e-6);
        assert!(min_eigenvalue_sym(&p) >= 1e-6 - 1e-12);
        assert_relative_eq!(p.clone(), p.transpose());
    }

    #[test]
    fn quadrature_rules_integrate_polynomials() {
        // integral of t^2 over [0, 0.03] with dt = 1e-3
        let dt = 1e-3;
        for (rule, n, tol) in [
            (Quadrature::Simpson, 30, 1e-18),
            (Quadrature::Simpson, 31, 1e-18),
            (Quadrature::Trapezoid, 30, 1e-8),
        ] {
            let w = quadrature_weights(rule, n, dt);
            let val: f64 = w
                .iter()
                .enumerate()
                .map(|(i, wi)| wi * (i as f64 * dt).powi(2))
                .sum();
            let exact = (n as f64 * dt).powi(3) / 3.0;
            assert!((val - exact).abs() < tol, "{rule:?} {n}: {val} vs {exact}");
        }
    }

    #[test]
    fn lstsq_rejects_rank_deficiency() {
        let a = DMatrix::from_row_slice(3, 2, &[1., 2., 2., 4., 3., 6.]);
        let b = DVector::from_vec(vec![1., 2., 3.]);
        assert!(matches!(lstsq(&a, &b, 1e-12), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
