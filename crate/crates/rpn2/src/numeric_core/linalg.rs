use super::{Dense, Scalar};
use crate::error::{shape_err, Error, Result};
use crate::Matrix;

const SINGULAR_PIVOT: f64 = 1e-12;
const EXP_TERM_CUTOFF: f64 = 1e-15;
const EXP_MAX_TERMS: usize = 1000;

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn solve<T: Scalar>(a: &Dense<T>, b: &Dense<T>) -> Result<Dense<T>> {
    a.ensure_square("solve")?;
    let n = a.rows();
    if b.rows() != n {
        return Err(shape_err("solve right-hand side", n, b.rows()));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let k = b.cols();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&p, &q| lu[(p, col)].abs().partial_cmp(&lu[(q, col)].abs()).unwrap())
            .unwrap_or(col);
        let pivot = lu[(pivot_row, col)];
        if pivot.abs() < T::lit(SINGULAR_PIVOT) {
            return Err(Error::Singular {
                pivot: pivot.abs().to_f64().unwrap_or(0.0),
            });
        }
        if pivot_row != col {
            swap_rows(&mut lu, pivot_row, col);
            swap_rows(&mut x, pivot_row, col);
        }
        for row in col + 1..n {
            let factor = lu[(row, col)] / pivot;
            if factor == T::zero() {
                continue;
            }
            for j in col..n {
                let v = lu[(col, j)];
                lu[(row, j)] -= factor * v;
            }
            for j in 0..k {
                let v = x[(col, j)];
                x[(row, j)] -= factor * v;
            }
        }
    }
    for col in (0..n).rev() {
        for j in 0..k {
            let mut acc = x[(col, j)];
            for t in col + 1..n {
                acc -= lu[(col, t)] * x[(t, j)];
            }
            x[(col, j)] = acc / lu[(col, col)];
        }
    }
    Ok(x)
}

fn swap_rows<T: Scalar>(m: &mut Dense<T>, a: usize, b: usize) {
    for j in 0..m.cols() {
        let tmp = m[(a, j)];
        m[(a, j)] = m[(b, j)];
        m[(b, j)] = tmp;
    }
}

/// `log |det A|` via the same pivoted elimination as [`solve`].
pub fn log_abs_det<T: Scalar>(a: &Dense<T>) -> Result<T> {
    a.ensure_square("log_abs_det")?;
    let n = a.rows();
    let mut lu = a.clone();
    let mut acc = T::zero();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&p, &q| lu[(p, col)].abs().partial_cmp(&lu[(q, col)].abs()).unwrap())
            .unwrap_or(col);
        let pivot = lu[(pivot_row, col)];
        if pivot == T::zero() {
            return Ok(T::neg_infinity());
        }
        swap_rows(&mut lu, pivot_row, col);
        acc += pivot.abs().ln();
        for row in col + 1..n {
            let factor = lu[(row, col)] / pivot;
            for j in col..n {
                let v = lu[(col, j)];
                lu[(row, j)] -= factor * v;
            }
        }
    }
    Ok(acc)
}

/// Truncated exponential series `Σ A^k / k!`.
///
/// With a nilpotency hint `m` the series stops after `A^{m-1}`, which is exact
/// when `A^m = 0`. Otherwise terms are added until their max-abs entry drops
/// below 1e-15.
pub fn matrix_exp<T: Scalar>(a: &Dense<T>, nilpotency_hint: Option<usize>) -> Result<Dense<T>> {
    a.ensure_square("matrix_exp")?;
    let n = a.rows();
    let mut sum = Dense::identity(n);
    let mut term = Dense::identity(n);
    let last = match nilpotency_hint {
        Some(m) => m.saturating_sub(1),
        None => EXP_MAX_TERMS,
    };
    for k in 1..=last {
        term = term.matmul(a)?.scale(T::one() / T::from_usize_lossy(k));
        if nilpotency_hint.is_none() && term.max_abs() < T::lit(EXP_TERM_CUTOFF) {
            break;
        }
        sum.add_scaled(&term, T::one())?;
    }
    Ok(sum)
}

fn to_nalgebra(m: &Matrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
/// Eigenvectors are the columns of the returned matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    a.ensure_square("symmetric_eigen")?;
    if !a.is_finite() {
        return Err(Error::Eigen("non-finite input".into()));
    }
    let eig = nalgebra::SymmetricEigen::new(to_nalgebra(a));
    let n = a.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Dense::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Singular values in descending order.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut values: Vec<f64> = to_nalgebra(a).singular_values().iter().copied().collect();
    values.sort_by(|p, q| q.total_cmp(p));
    values
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(a: &Matrix, rel_tol: f64) -> usize {
    let values = singular_values(a);
    let Some(&top) = values.first() else {
        return 0;
    };
    if top == 0.0 {
        return 0;
    }
    values.iter().filter(|&&s| s > rel_tol * top).count()
}
