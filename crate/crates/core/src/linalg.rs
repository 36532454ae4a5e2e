//! Dense linear algebra for small matrices (regression Gram systems and
//! volatility matrices). Everything is hand-rolled so the routines stay
//! generic over the scalar type; sizes here are tiny (k <= 20 or so) and
//! never performance-critical next to the Monte Carlo sweeps.

use crate::error::{Result, SolverError};
use crate::scalar::Scalar;

/// Dot product of two equal-length slices.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc = acc + *x * *y;
    }
    acc
}

/// In-place Cholesky factorization of a symmetric positive definite matrix
/// stored row-major; on success the lower triangle holds L with A = L L'.
pub fn cholesky<S: Scalar>(a: &mut [S], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag = diag - a[j * n + k] * a[j * n + k];
        }
        if diag <= S::zero() || !diag.is_finite() {
            return Err(SolverError::NumericalBlowup(format!(
                "Cholesky pivot {} non-positive ({:e})",
                j,
                diag.as_f64()
            )));
        }
        let l_jj = diag.sqrt();
        a[j * n + j] = l_jj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l_jj;
        }
    }
    Ok(())
}

/// Solves A x = b given the Cholesky factor L of A (from `cholesky`),
/// overwriting `b` with the solution.
pub fn cholesky_solve<S: Scalar>(l: &[S], n: usize, b: &mut [S]) {
    debug_assert_eq!(b.len(), n);
    // forward: L y = b
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    // backward: L' x = y
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s = s - l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Extreme eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (min, max) over the spectrum. Used for condition estimates.
pub fn symmetric_eigen_extremes<S: Scalar>(a: &[S], n: usize) -> (S, S) {
    debug_assert_eq!(a.len(), n * n);
    if n == 1 {
        return (a[0], a[0]);
    }
    let mut m = a.to_vec();
    let tol = S::epsilon() * S::lit(64.0);
    for _sweep in 0..64 {
        let mut off = S::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + m[i * n + j] * m[i * n + j];
            }
        }
        let mut norm = S::zero();
        for i in 0..n {
            norm = norm + m[i * n + i] * m[i * n + i];
        }
        if off <= tol * tol * (norm + off) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == S::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (S::two() * apq);
                // stable rotation: t = sign(tau)/(|tau| + sqrt(1+tau^2))
                let t = if tau >= S::zero() {
                    S::one() / (tau + (S::one() + tau * tau).sqrt())
                } else {
                    -S::one() / (-tau + (S::one() + tau * tau).sqrt())
                };
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut lo = m[0];
    let mut hi = m[0];
    for i in 0..n {
        let d = m[i * n + i];
        if d < lo {
            lo = d;
        }
        if d > hi {
            hi = d;
        }
    }
    (lo, hi)
}

/// Condition number estimate (ratio of extreme |eigenvalues|) for a
/// symmetric positive semidefinite matrix.
pub fn symmetric_condition<S: Scalar>(a: &[S], n: usize) -> S {
    let (lo, hi) = symmetric_eigen_extremes(a, n);
    let lo = lo.abs();
    let hi = hi.abs();
    if lo == S::zero() {
        S::infinity()
    } else {
        hi / lo
    }
}

/// Inverse of a small general matrix by Gauss-Jordan with partial pivoting.
pub fn invert<S: Scalar>(a: &[S], n: usize) -> Result<Vec<S>> {
    debug_assert_eq!(a.len(), n * n);
    let mut work = a.to_vec();
    let mut inv = vec![S::zero(); n * n];
    for i in 0..n {
        inv[i * n + i] = S::one();
    }
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = work[col * n + col].abs();
        for r in (col + 1)..n {
            let v = work[r * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val == S::zero() || !pivot_val.is_finite() {
            return Err(SolverError::invalid_model(format!(
                "singular matrix: no usable pivot in column {col}"
            )));
        }
        if pivot_row != col {
            for k in 0..n {
                work.swap(col * n + k, pivot_row * n + k);
                inv.swap(col * n + k, pivot_row * n + k);
            }
        }
        let p = work[col * n + col];
        for k in 0..n {
            work[col * n + k] = work[col * n + k] / p;
            inv[col * n + k] = inv[col * n + k] / p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = work[r * n + col];
            if factor == S::zero() {
                continue;
            }
            for k in 0..n {
                work[r * n + k] = work[r * n + k] - factor * work[col * n + k];
                inv[r * n + k] = inv[r * n + k] - factor * inv[col * n + k];
            }
        }
    }
    Ok(inv)
}

/// y = A x for a row-major n x n matrix.
pub fn mat_vec<S: Scalar>(a: &[S], n: usize, x: &[S], y: &mut [S]) {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(x.len(), n);
    debug_assert_eq!(y.len(), n);
    for i in 0..n {
        y[i] = dot(&a[i * n..(i + 1) * n], x);
    }
}

/// Transpose of a row-major n x n matrix.
pub fn transpose<S: Scalar>(a: &[S], n: usize) -> Vec<S> {
    let mut t = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}
