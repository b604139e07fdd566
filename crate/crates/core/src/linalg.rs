//! Jacobi-type decompositions used for rank-revealing orthonormalisation.

use crate::error::{CapacityError, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

const MAX_SWEEPS: usize = 80;

/// Thin SVD restricted to the left factor: `A V = U diag(s)`.
#[derive(Debug, Clone)]
pub struct LeftSvd<T> {
    /// Columns are the left singular vectors, sorted by decreasing singular value.
    pub u: Matrix<T>,
    pub singular_values: Vec<T>,
}

/// One-sided (Hestenes) Jacobi SVD. Columns of `a` are rotated pairwise until
/// mutually orthogonal; their norms are the singular values.
pub fn jacobi_svd_left<T: Real>(a: &Matrix<T>) -> LeftSvd<T> {
    let (m, n) = a.shape();
    // Work column-major: one Vec per column.
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.column(j)).collect();
    let eps = T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = T::zero();
                    let mut beta = T::zero();
                    let mut gamma = T::zero();
                    for i in 0..m {
                        alpha += cp[i] * cp[i];
                        beta += cq[i] * cq[i];
                        gamma += cp[i] * cq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let cp = &mut left[p];
                let cq = &mut right[0];
                for i in 0..m {
                    let x = cp[i];
                    let y = cq[i];
                    cp[i] = c * x - s * y;
                    cq[i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut pairs: Vec<(T, Vec<T>)> = cols
        .into_iter()
        .map(|c| {
            let norm = c.iter().map(|&x| x * x).sum::<T>().sqrt();
            (norm, c)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut u = Matrix::zeros(m, n);
    let mut singular_values = Vec::with_capacity(n);
    for (j, (norm, c)) in pairs.into_iter().enumerate() {
        if norm > T::zero() {
            let normalized: Vec<T> = c.iter().map(|&x| x / norm).collect();
            u.set_column(j, &normalized);
        }
        singular_values.push(norm);
    }
    LeftSvd { u, singular_values }
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    /// Sorted in decreasing order.
    pub eigenvalues: Vec<T>,
    /// Column `k` is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: Matrix<T>,
}

/// Cyclic Jacobi eigenvalue algorithm for symmetric matrices.
pub fn symmetric_eigen<T: Real>(a: &Matrix<T>) -> Result<SymmetricEigen<T>> {
    if !a.is_square() {
        return Err(CapacityError::mismatch(
            "symmetric_eigen",
            "square matrix",
            format!("{:?}", a.shape()),
        ));
    }
    let n = a.nrows();
    let mut w = a.symmetrized();
    let mut v = Matrix::identity(n);
    let eps = T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| w[(i, j)] * w[(i, j)])
            .sum();
        let scale = w.frobenius_norm_sq();
        if off <= eps * eps * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (T::one() + theta * theta).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let wkp = w[(k, p)];
                    let wkq = w[(k, q)];
                    w[(k, p)] = c * wkp - s * wkq;
                    w[(k, q)] = s * wkp + c * wkq;
                }
                for k in 0..n {
                    let wpk = w[(p, k)];
                    let wqk = w[(q, k)];
                    w[(p, k)] = c * wpk - s * wqk;
                    w[(q, k)] = s * wpk + c * wqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        w[(j, j)]
            .partial_cmp(&w[(i, i)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(SymmetricEigen {
        eigenvalues: order.iter().map(|&i| w[(i, i)]).collect(),
        eigenvectors: v.select_columns(&order),
    })
}

/// Lower-triangular `L` with `A = L Lᵀ` for symmetric positive definite `A`.
/// A pivot below `tol·A_jj` reports column `j` as deficient.
pub fn cholesky_factor<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>> {
    if !a.is_square() {
        return Err(CapacityError::mismatch("cholesky_factor", a.nrows(), a.ncols()));
    }
    let n = a.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= T::tol(1e-12) * a[(j, j)].abs() || d <= T::zero() {
            return Err(CapacityError::RankDeficient { columns: vec![j] });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// `L⁻¹ b` for lower-triangular `L`.
pub fn solve_lower<T: Real>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.nrows();
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// `L⁻ᵀ b` for lower-triangular `L`.
pub fn solve_lower_transpose<T: Real>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.nrows();
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn cholesky_solve<T: Real>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    if b.len() != a.nrows() {
        return Err(CapacityError::mismatch("cholesky_solve", a.nrows(), b.len()));
    }
    let l = cholesky_factor(a)?;
    Ok(solve_lower_transpose(&l, &solve_lower(&l, b)))
}
