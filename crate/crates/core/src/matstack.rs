//! Small dense linear algebra shared by the rest of the crate.
//!
//! Everything here works on heap-allocated `nalgebra` matrices. Problem sizes
//! are tiny (transverse dimension `2m` with `m` a handful of outputs), so the
//! Lyapunov solver goes through the Kronecker-sum linear system directly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Asymmetry tolerance for matrices that are supposed to be symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest admissible pivot in the positive-definiteness test.
pub const PIVOT_TOL: f64 = 1e-12;

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &Mat) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Block-diagonal matrix with the given square blocks.
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols()))
            .copy_from(*b);
        off += b.nrows();
    }
    out
}

fn check_symmetric(m: &Mat) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension {
            context: "symmetric matrix",
            expected: "square".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    // relative to the magnitude of the entries so that scaled problems behave
    let tol = SYMMETRY_TOL * max_abs(m).max(1.0);
    let a = asymmetry(m);
    if a > tol {
        return Err(Error::NotSymmetric { asymmetry: a });
    }
    Ok(())
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_sym_extremes(m: &Mat) -> Result<(f64, f64)> {
    check_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Cholesky-style test: true iff every pivot of the symmetric factorization
/// exceeds [`PIVOT_TOL`]. Non-symmetric or non-square input returns false.
pub fn is_positive_definite(m: &Mat) -> bool {
    if check_symmetric(m).is_err() {
        return false;
    }
    let n = m.nrows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PIVOT_TOL) {
            return false;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    true
}

/// Largest real part among the eigenvalues of a square matrix.
pub fn spectral_abscissa(a: &Mat) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `A^T P + P A + Q = 0` for symmetric `P`.
///
/// `a_cl` must be Hurwitz and `q` symmetric positive definite. The solve
/// vectorizes the equation into `(I ⊗ A^T + A^T ⊗ I) vec(P) = -vec(Q)` and uses
/// a dense LU factorization, which is exact enough for `n ≤ ~10`.
pub fn solve_lyapunov(a_cl: &Mat, q: &Mat) -> Result<Mat> {
    let n = a_cl.nrows();
    if !a_cl.is_square() || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension {
            context: "solve_lyapunov",
            expected: format!("{n}x{n} pair"),
            got: format!(
                "a_cl {}x{}, q {}x{}",
                a_cl.nrows(),
                a_cl.ncols(),
                q.nrows(),
                q.ncols()
            ),
        });
    }
    check_symmetric(q)?;
    if !is_positive_definite(q) {
        return Err(Error::NotPositiveDefinite(
            "Q in the Lyapunov equation".into(),
        ));
    }
    let abscissa = spectral_abscissa(a_cl);
    if !(abscissa < 0.0) {
        return Err(Error::NotHurwitz {
            max_real_part: abscissa,
        });
    }

    let eye = Mat::identity(n, n);
    let at = a_cl.transpose();
    let kron_sum = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -Vector::from_column_slice(q.as_slice());
    let vec_p = kron_sum
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Kronecker-sum Lyapunov operator".into()))?;
    let p = Mat::from_column_slice(n, n, vec_p.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Max-abs entry of `A^T P + P A + Q`.
pub fn lyapunov_residual(a_cl: &Mat, p: &Mat, q: &Mat) -> f64 {
    max_abs(&(a_cl.transpose() * p + p * a_cl + q))
}
