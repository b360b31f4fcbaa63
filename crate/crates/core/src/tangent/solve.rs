use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use super::{tangent_project, ContrastSpec, FisherOperator, TangentBasis};
use crate::linalg::{helmert_basis, orthonormal_complement, orthonormalize, spd_inverse};
use crate::{ComparisonRecord, Error, Result};

/// Settings for the efficient-direction solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CgOptions {
    /// Relative residual at which conjugate gradients stops.
    pub tol: f64,
    /// Iteration cap; `None` means `10·r·(d_t + d_m)`.
    pub max_iter: Option<usize>,
    /// The operator is regularized by `ridge_scale / (d_t·d_m)` times the identity.
    pub ridge_scale: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: None, ridge_scale: 1e-8 }
    }
}

fn ridge(options: &CgOptions, task_count: usize, model_count: usize) -> f64 {
    options.ridge_scale / (task_count * model_count) as f64
}

/// Solves `(P_T Ĝ P_T + ε I) H = P_T Γ` by conjugate gradients using only
/// operator applications. Starts from `d_t·d_m·P_T Γ`.
pub fn solve_efficient_direction(
    contrast: &ContrastSpec,
    basis: &TangentBasis,
    fisher: &FisherOperator,
    options: &CgOptions,
) -> Result<DMatrix<f64>> {
    let (dt, dm) = fisher.shape();
    let eps = ridge(options, dt, dm);
    let apply = |x: &DMatrix<f64>| {
        let px = tangent_project(x, basis);
        tangent_project(&fisher.apply(&px), basis) + x * eps
    };
    let b = tangent_project(&contrast.to_dense(dt, dm), basis);
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(b);
    }
    let max_iter = options.max_iter.unwrap_or(10 * basis.rank() * (dt + dm));
    let mut x = &b * (dt * dm) as f64;
    let mut r = &b - apply(&x);
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for _ in 0..max_iter {
        if Float::sqrt(rr) <= options.tol * b_norm {
            return Ok(tangent_project(&x, basis));
        }
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rr / pap;
        x += &p * alpha;
        r -= &ap * alpha;
        let rr_next = r.norm_squared();
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    let residual = (&b - apply(&x)).norm() / b_norm;
    if residual <= options.tol {
        return Ok(tangent_project(&x, basis));
    }
    Err(Error::CgNotConverged { residual, iterations: max_iter })
}

/// Dense reference solver for small problems (`d_t·d_m ≤ 400`): assembles the
/// projector column by column, extracts an orthonormal basis of its range and
/// solves the restricted system directly.
pub fn solve_efficient_direction_dense(
    contrast: &ContrastSpec,
    basis: &TangentBasis,
    fisher: &FisherOperator,
    options: &CgOptions,
) -> Result<DMatrix<f64>> {
    let (dt, dm) = fisher.shape();
    let cells = dt * dm;
    if cells > 400 {
        return Err(Error::InvalidArgument("dense solve is limited to 400 cells".into()));
    }
    let unit = |k: usize| {
        let mut e = DMatrix::zeros(dt, dm);
        e[(k / dm, k % dm)] = 1.0;
        e
    };
    let flat = |m: &DMatrix<f64>| DVector::from_fn(cells, |k, _| m[(k / dm, k % dm)]);
    let projector = DMatrix::from_fn(cells, cells, |_, _| 0.0);
    let mut projector = projector;
    for k in 0..cells {
        projector.set_column(k, &flat(&tangent_project(&unit(k), basis)));
    }
    let q = orthonormalize(&projector, &[]);
    let mut ghat = DMatrix::zeros(cells, cells);
    for k in 0..cells {
        ghat.set_column(k, &flat(&fisher.apply(&unit(k))));
    }
    let a = q.transpose() * ghat * &q + DMatrix::identity(q.ncols(), q.ncols()) * ridge(options, dt, dm);
    let rhs = q.transpose() * flat(&contrast.to_dense(dt, dm));
    let y = a.lu().solve(&rhs).ok_or(Error::Decomposition("dense tangent solve"))?;
    let x = q * y;
    Ok(DMatrix::from_fn(dt, dm, |t, m| x[t * dm + m]))
}

/// The restricted Fisher operator written in orthonormal tangent coordinates.
///
/// Coordinates are `y = (c, b)` with `c ∈ R^{r×(d_m−1)}` and
/// `b ∈ R^{(d_t−r)×r}`, mapped to matrices by `Q(y) = U c Nᵀ + W b Vᵀ`, where
/// `N` is the Helmert basis of the centered model space and `W` spans the
/// orthogonal complement of `U`. `Q` is an isometry onto the tangent space, so
/// `QQᵀ = P_T` and the operator becomes the `p × p` matrix `M = QᵀĜQ + εI`.
#[derive(Debug, Clone)]
pub struct TangentSystem {
    basis: TangentBasis,
    helmert: DMatrix<f64>,
    complement: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl TangentSystem {
    pub fn new(basis: TangentBasis, fisher: &FisherOperator, options: &CgOptions) -> Result<Self> {
        let (dt, dm) = fisher.shape();
        if basis.u().nrows() != dt || basis.v().nrows() != dm {
            return Err(Error::DimensionMismatch("basis and Fisher operator shapes differ".into()));
        }
        let helmert = helmert_basis(dm);
        let complement = orthonormal_complement(basis.u());
        let mut system = Self { basis, helmert, complement, inverse: DMatrix::zeros(0, 0) };
        let mut gram = system.assemble(&fisher.row_laplacians());
        let eps = ridge(options, dt, dm);
        for i in 0..gram.nrows() {
            gram[(i, i)] += eps;
        }
        system.inverse = spd_inverse(gram)?;
        Ok(system)
    }

    pub fn basis(&self) -> &TangentBasis {
        &self.basis
    }

    /// Tangent dimension `p`.
    pub fn dimension(&self) -> usize {
        self.basis.dimension()
    }

    /// `M⁻¹`.
    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    fn split(&self) -> (usize, usize, usize) {
        let r = self.basis.rank();
        let dm1 = self.helmert.ncols();
        (r, dm1, r * dm1)
    }

    /// `Qᵀ G`.
    pub fn coords(&self, g: &DMatrix<f64>) -> DVector<f64> {
        let (r, dm1, p1) = self.split();
        let c = self.basis.u().transpose() * g * &self.helmert;
        let b = self.complement.transpose() * (g * self.basis.v());
        let mut y = DVector::zeros(self.dimension());
        for k in 0..r {
            for j in 0..dm1 {
                y[k * dm1 + j] = c[(k, j)];
            }
        }
        for l in 0..b.nrows() {
            for k in 0..r {
                y[p1 + l * r + k] = b[(l, k)];
            }
        }
        y
    }

    /// `Qᵀ(e_t (e_a − e_b)ᵀ)` without forming the dense contrast.
    pub fn gap_coords(&self, task: usize, a: usize, b: usize) -> DVector<f64> {
        let (r, dm1, p1) = self.split();
        let (u, v, w, n) = (self.basis.u(), self.basis.v(), &self.complement, &self.helmert);
        let mut y = DVector::zeros(self.dimension());
        for k in 0..r {
            let uk = u[(task, k)];
            for j in 0..dm1 {
                y[k * dm1 + j] = uk * (n[(a, j)] - n[(b, j)]);
            }
        }
        for l in 0..w.ncols() {
            let wl = w[(task, l)];
            for k in 0..r {
                y[p1 + l * r + k] = wl * (v[(a, k)] - v[(b, k)]);
            }
        }
        y
    }

    /// Sparse columns of `B_t`, where cell `(t, m)` has coordinates
    /// `B_t [N[m,·], V[m,·]]ᵀ`.
    fn task_columns(&self, task: usize) -> Vec<Vec<(usize, f64)>> {
        let (r, dm1, p1) = self.split();
        let (u, w) = (self.basis.u(), &self.complement);
        let mut cols = Vec::with_capacity(dm1 + r);
        for j in 0..dm1 {
            cols.push((0..r).map(|k| (k * dm1 + j, u[(task, k)])).collect());
        }
        for k in 0..r {
            cols.push((0..w.ncols()).map(|l| (p1 + l * r + k, w[(task, l)])).collect());
        }
        cols
    }

    /// `[Nᵀ; Vᵀ]`, mapping a model to its local cell coordinates.
    fn cell_embedding(&self) -> DMatrix<f64> {
        let (r, dm1, _) = self.split();
        let dm = self.helmert.nrows();
        DMatrix::from_fn(dm1 + r, dm, |i, m| if i < dm1 { self.helmert[(m, i)] } else { self.basis.v()[(m, i - dm1)] })
    }

    /// `C_tᵀ A C_t`, where column `m` of `C_t` holds the coordinates of the
    /// cell `e_t e_mᵀ`. The quadratic form of `A` on the gap between models
    /// `a` and `b` of task `t` is `G_aa − 2 G_ab + G_bb` for the result `G`.
    pub fn task_cell_form(&self, task: usize, a: &DMatrix<f64>) -> DMatrix<f64> {
        let cols = self.task_columns(task);
        let k = cols.len();
        let mut ab = DMatrix::zeros(a.nrows(), k);
        for (j, col) in cols.iter().enumerate() {
            let mut out = ab.column_mut(j);
            for &(i, v) in col {
                out.axpy(v, &a.column(i), 1.0);
            }
        }
        let mut inner = DMatrix::zeros(k, k);
        for (i, col) in cols.iter().enumerate() {
            for j in 0..k {
                inner[(i, j)] = col.iter().map(|&(row, v)| v * ab[(row, j)]).sum();
            }
        }
        let e = self.cell_embedding();
        e.transpose() * inner * e
    }

    /// `C_tᵀ y`: the inner products of `y` with every cell of task `t`.
    pub fn task_cell_vector(&self, task: usize, y: &DVector<f64>) -> DVector<f64> {
        let cols = self.task_columns(task);
        let by = DVector::from_iterator(cols.len(), cols.iter().map(|c| c.iter().map(|&(i, v)| v * y[i]).sum()));
        self.cell_embedding().transpose() * by
    }

    /// Coordinates of `P_T Γ`.
    pub fn contrast_coords(&self, contrast: &ContrastSpec) -> DVector<f64> {
        match contrast.as_gap() {
            Some((t, a, b)) => self.gap_coords(t, a, b),
            None => self.coords(&contrast.to_dense(self.basis.u().nrows(), self.basis.v().nrows())),
        }
    }

    /// `Q y`.
    pub fn embed(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let (r, dm1, p1) = self.split();
        let c = DMatrix::from_fn(r, dm1, |k, j| y[k * dm1 + j]);
        let b = DMatrix::from_fn(self.complement.ncols(), r, |l, k| y[p1 + l * r + k]);
        self.basis.u() * (c * self.helmert.transpose()) + (&self.complement * b) * self.basis.v().transpose()
    }

    /// Efficient direction `Q M⁻¹ Qᵀ Γ`.
    pub fn direction(&self, contrast: &ContrastSpec) -> DMatrix<f64> {
        self.embed(&(&self.inverse * self.contrast_coords(contrast)))
    }

    /// `Σ_t Q_tᵀ L_t Q_t` for per-task symmetric `d_m × d_m` matrices `L_t`,
    /// where `Q_t` maps coordinates to row `t` of `Q y`.
    pub fn assemble(&self, laplacians: &[DMatrix<f64>]) -> DMatrix<f64> {
        let (r, dm1, p1) = self.split();
        let p = self.dimension();
        let (u, v, w, n) = (self.basis.u(), self.basis.v(), &self.complement, &self.helmert);
        let q = w.ncols();
        let mut m = DMatrix::zeros(p, p);
        for (t, l) in laplacians.iter().enumerate() {
            if l.iter().all(|&x| x == 0.0) {
                continue;
            }
            let ln = l * n;
            let nln = n.transpose() * &ln;
            let nlv = ln.transpose() * v;
            let vlv = v.transpose() * l * v;
            let ut: Vec<f64> = (0..r).map(|k| u[(t, k)]).collect();
            let wt: Vec<f64> = (0..q).map(|j| w[(t, j)]).collect();
            for k in 0..r {
                for k2 in 0..r {
                    let s = ut[k] * ut[k2];
                    if s == 0.0 {
                        continue;
                    }
                    for j in 0..dm1 {
                        let row = k * dm1 + j;
                        for j2 in 0..dm1 {
                            m[(row, k2 * dm1 + j2)] += s * nln[(j, j2)];
                        }
                    }
                }
                for l2 in 0..q {
                    let s = ut[k] * wt[l2];
                    if s == 0.0 {
                        continue;
                    }
                    for j in 0..dm1 {
                        let row = k * dm1 + j;
                        for k2 in 0..r {
                            let val = s * nlv[(j, k2)];
                            m[(row, p1 + l2 * r + k2)] += val;
                            m[(p1 + l2 * r + k2, row)] += val;
                        }
                    }
                }
            }
            for l1 in 0..q {
                for l2 in 0..q {
                    let s = wt[l1] * wt[l2];
                    if s == 0.0 {
                        continue;
                    }
                    for k in 0..r {
                        for k2 in 0..r {
                            m[(p1 + l1 * r + k, p1 + l2 * r + k2)] += s * vlv[(k, k2)];
                        }
                    }
                }
            }
        }
        m
    }
}

/// Per-task matrices `Σ_{i: t_i = t} w_i (e_a − e_b)(e_a − e_b)ᵀ`.
pub(crate) fn weighted_laplacians(
    records: &[ComparisonRecord],
    weights: &[f64],
    task_count: usize,
    model_count: usize,
) -> Vec<DMatrix<f64>> {
    let mut out = alloc::vec![DMatrix::zeros(model_count, model_count); task_count];
    for (r, &w) in records.iter().zip(weights) {
        let l = &mut out[r.task];
        l[(r.model_a, r.model_a)] += w;
        l[(r.model_b, r.model_b)] += w;
        l[(r.model_a, r.model_b)] -= w;
        l[(r.model_b, r.model_a)] -= w;
    }
    out
}
