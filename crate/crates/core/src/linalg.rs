//! Dense linear-algebra helpers on top of `nalgebra`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::{Error, Result};

/// Thin singular value decomposition `m = U diag(σ) Vᵀ` with singular values
/// in descending order; `U` is `rows × k`, `V` is `cols × k`, `k = min(rows, cols)`.
///
/// Computed by one-sided Jacobi rotations, which stay accurate on exactly
/// low-rank inputs. Singular vectors of zero singular values are completed to
/// orthonormal sets.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi on a matrix with at least as many rows as columns.
fn jacobi_tall(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (w.column(p), w.column(q));
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if gamma == 0.0 || Float::abs(gamma) <= f64::EPSILON * Float::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = Float::signum(zeta) / (Float::abs(zeta) + Float::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / Float::sqrt(1.0 + t * t);
                let s = c * t;
                rotate_columns(&mut w, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Decomposition("Jacobi singular value decomposition"));
    }
    let mut order: Vec<(f64, usize)> = (0..n).map(|j| (w.column(j).norm(), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0));
    let top = order.first().map_or(0.0, |o| o.0);
    let floor = top * f64::EPSILON * (a.nrows().max(n) as f64);
    let mut sigma = Vec::with_capacity(n);
    let mut u_cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut v_sorted = DMatrix::zeros(n, n);
    for (k, &(s, j)) in order.iter().enumerate() {
        v_sorted.set_column(k, &v.column(j));
        if s > floor && s > 0.0 {
            sigma.push(s);
            u_cols.push(w.column(j) / s);
        } else {
            sigma.push(0.0);
        }
    }
    let live = u_cols.len();
    let rows = a.nrows();
    if live < n {
        let basis = orthonormalize(&DMatrix::identity(rows, rows), &u_cols);
        for j in 0..n - live {
            u_cols.push(basis.column(j).into_owned());
        }
    }
    let u = DMatrix::from_fn(rows, n, |i, j| u_cols[j][i]);
    Ok((u, sigma, v_sorted))
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

impl Svd {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("SVD input"));
        }
        if m.nrows() >= m.ncols() {
            let (u, singular_values, v) = jacobi_tall(m)?;
            Ok(Self { u, singular_values, v })
        } else {
            let (v, singular_values, u) = jacobi_tall(&m.transpose())?;
            Ok(Self { u, singular_values, v })
        }
    }

    /// Leading `r` components `(U_r, σ_1..σ_r, V_r)`.
    pub fn truncate(&self, r: usize) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
        (
            self.u.columns(0, r).into_owned(),
            self.singular_values[..r].to_vec(),
            self.v.columns(0, r).into_owned(),
        )
    }

    /// Best rank-`r` approximation `U_r diag(σ) V_rᵀ`.
    pub fn low_rank(&self, r: usize) -> DMatrix<f64> {
        let (u, s, v) = self.truncate(r);
        scale_columns(u, &s) * v.transpose()
    }
}

/// Multiplies column `k` of `m` by `s[k]`.
pub fn scale_columns(mut m: DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    for (k, &sk) in s.iter().enumerate() {
        m.column_mut(k).scale_mut(sk);
    }
    m
}

/// Orthonormal basis of the orthogonal complement of the all-ones vector in
/// `R^d`, as a `d × (d−1)` matrix with Helmert columns.
pub fn helmert_basis(d: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(d, d.saturating_sub(1));
    for j in 0..d.saturating_sub(1) {
        let k = (j + 1) as f64;
        let norm = Float::sqrt(k * (k + 1.0));
        for i in 0..=j {
            h[(i, j)] = 1.0 / norm;
        }
        h[(j + 1, j)] = -k / norm;
    }
    h
}

/// Gram–Schmidt (two passes) on the columns of `m`, after first removing the
/// span of `against`. Columns whose residual norm falls below `1e-10` relative
/// to their original norm are dropped.
pub fn orthonormalize(m: &DMatrix<f64>, against: &[DVector<f64>]) -> DMatrix<f64> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(m.ncols());
    for col in m.column_iter() {
        let mut x: DVector<f64> = col.into_owned();
        let norm0 = x.norm();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in against.iter().chain(out.iter()) {
                let c = q.dot(&x);
                x.axpy(-c, q, 1.0);
            }
        }
        let n = x.norm();
        if n > 1e-10 * norm0 {
            out.push(x / n);
        }
    }
    let rows = m.nrows();
    DMatrix::from_fn(rows, out.len(), |i, j| out[j][i])
}

/// Orthonormal basis `W` (`d × (d−r)`) of the complement of the column span of
/// the orthonormal matrix `u` (`d × r`).
pub fn orthonormal_complement(u: &DMatrix<f64>) -> DMatrix<f64> {
    let d = u.nrows();
    let against: Vec<DVector<f64>> = u.column_iter().map(|c| c.into_owned()).collect();
    let w = orthonormalize(&DMatrix::identity(d, d), &against);
    w.columns(0, d - u.ncols().min(d)).into_owned()
}

/// Same as [`orthonormalize`] with the all-ones direction removed first.
pub fn orthonormalize_against_ones(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let ones = DVector::from_element(d, 1.0 / Float::sqrt(d as f64));
    orthonormalize(m, &[ones])
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::linalg::Cholesky::new(m)
        .map(|c| c.inverse())
        .ok_or(Error::Decomposition("Cholesky factorization"))
}

/// Solves `m x = b` for symmetric positive-definite `m`.
pub fn spd_solve(m: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    nalgebra::linalg::Cholesky::new(m).map(|c| c.solve(b))
}

/// Frobenius inner product.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}
