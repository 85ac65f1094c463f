//! Operator norm by power iteration and SPD solves by Cholesky.

use super::matrix::{dot, norm2, Matrix};
use crate::error::{Error, Result};
use crate::numkit::Rng;

pub const OPERATOR_NORM_TOL: f64 = 1e-8;
pub const OPERATOR_NORM_MAX_ITER: usize = 10_000;

/// Largest singular value of `a`, i.e. the operator norm, estimated by power
/// iteration on AᵀA to relative accuracy `tol`.
pub fn operator_norm(a: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::Empty {
            context: "operator_norm",
        });
    }
    if tol <= 0.0 {
        return Err(Error::InvalidArgument {
            context: "operator_norm",
            message: format!("tol must be positive, got {tol}"),
        });
    }
    // Fixed-seed start vector: deterministic, and a Gaussian direction is
    // never orthogonal to the dominant right singular subspace in practice.
    let mut v = Rng::from_seed(0x9e3779b97f4a7c15).normal_vec(a.cols(), 1.0);
    let nv = norm2(&v);
    for x in &mut v {
        *x /= nv;
    }

    let mut sigma_prev = 0.0;
    for _ in 0..max_iter {
        let av = a.matvec(&v);
        let atav = a.matvec_t(&av);
        let gram_norm = norm2(&atav);
        if gram_norm == 0.0 {
            return Ok(0.0);
        }
        // Rayleigh quotient of AᵀA at unit v is ‖Av‖², so σ = ‖Av‖ here.
        let sigma = dot(&atav, &v).max(0.0).sqrt();
        for (x, y) in v.iter_mut().zip(&atav) {
            *x = y / gram_norm;
        }
        if (sigma - sigma_prev).abs() <= tol * sigma.max(f64::MIN_POSITIVE) {
            return Ok(sigma);
        }
        sigma_prev = sigma;
    }
    Err(Error::NonConvergence {
        max_iter,
        last_estimate: sigma_prev,
    })
}

/// Operator norm with the default tolerance and iteration budget.
pub fn operator_norm_default(a: &Matrix) -> Result<f64> {
    operator_norm(a, OPERATOR_NORM_TOL, OPERATOR_NORM_MAX_ITER)
}

/// Cholesky factor of a symmetric positive definite matrix: returns lower
/// triangular `c` with `c cᵀ = m`.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    assert_eq!(n, m.cols(), "cholesky: matrix must be square");
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= c[(i, k)] * c[(j, k)];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::NotPositiveDefinite { pivot: s, index: i });
                }
                c[(i, j)] = s.sqrt();
            } else {
                c[(i, j)] = s / c[(j, j)];
            }
        }
    }
    Ok(c)
}

/// Solves `X (A + ridge·I) = B` for symmetric `a` with `a + ridge·I`
/// positive definite, via Cholesky factorization.
///
/// `a` is n×n and `b` is m×n; the result is m×n.
pub fn solve_spd(a: &Matrix, b: &Matrix, ridge: f64) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimMismatch {
            context: "solve_spd: A must be square",
            expected: n,
            actual: a.cols(),
        });
    }
    if b.cols() != n {
        return Err(Error::DimMismatch {
            context: "solve_spd: B cols must match A",
            expected: n,
            actual: b.cols(),
        });
    }
    if ridge < 0.0 {
        return Err(Error::InvalidArgument {
            context: "solve_spd",
            message: format!("ridge must be nonnegative, got {ridge}"),
        });
    }
    let mut reg = a.clone();
    for i in 0..n {
        reg[(i, i)] += ridge;
    }
    let c = cholesky(&reg)?;

    // X M = B with M = C Cᵀ symmetric: solve M xᵀ = bᵀ row by row of B.
    let mut out = Matrix::zeros(b.rows(), n);
    let mut y = vec![0.0; n];
    for r in 0..b.rows() {
        let rhs = b.row(r);
        // Forward substitution C y = rhs.
        for i in 0..n {
            let mut s = rhs[i];
            for k in 0..i {
                s -= c[(i, k)] * y[k];
            }
            y[i] = s / c[(i, i)];
        }
        // Back substitution Cᵀ x = y.
        let xrow = out.row_mut(r);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= c[(k, i)] * xrow[k];
            }
            xrow[i] = s / c[(i, i)];
        }
    }
    Ok(out)
}
