use nalgebra::DMatrix;

use crate::linalg::{orthonormalize, orthonormalize_against_ones, Svd};
use crate::model::center_rows_in_place;
use crate::{Error, Result, ScoreMatrix};

/// Singular subspaces of a rank-r fit. `V` is orthogonal to the all-ones
/// vector, which makes the tangent space respect the row gauge.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

const BASIS_TOL: f64 = 1e-8;

impl TangentBasis {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let r = u.ncols();
        if r == 0 || v.ncols() != r {
            return Err(Error::DimensionMismatch("basis ranks differ or are zero".into()));
        }
        for (name, m) in [("U", &u), ("V", &v)] {
            let gram = m.transpose() * m;
            if (gram - DMatrix::<f64>::identity(r, r)).amax() > BASIS_TOL {
                return Err(Error::InvalidArgument(alloc::format!("{name} is not orthonormal")));
            }
        }
        for (k, c) in v.column_iter().enumerate() {
            if c.sum().abs() > BASIS_TOL {
                return Err(Error::GaugeViolation { row: k, sum: c.sum() });
            }
        }
        Ok(Self { u, v })
    }

    /// Leading `r` singular subspaces of `theta`, with `V` re-orthogonalized
    /// against the all-ones vector.
    pub fn from_scores(theta: &ScoreMatrix, r: usize) -> Result<Self> {
        let svd = Svd::new(theta.values())?;
        if r == 0 || r > svd.singular_values.len() {
            return Err(Error::InvalidArgument(alloc::format!("rank {r} out of range")));
        }
        let (u, s, v) = svd.truncate(r);
        if s[r - 1] < 1e-12 * s[0].max(1e-300) {
            return Err(Error::RankDeficient(s[r - 1]));
        }
        let u = orthonormalize(&u, &[]);
        let v = orthonormalize_against_ones(&v);
        if u.ncols() != r || v.ncols() != r {
            return Err(Error::RankDeficient(s[r - 1]));
        }
        Self::new(u, v)
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// Dimension of the tangent space: `r(d_m − 1) + (d_t − r) r`.
    pub fn dimension(&self) -> usize {
        let r = self.rank();
        r * (self.v.nrows() - 1) + (self.u.nrows() - r) * r
    }
}

/// Orthogonal projection onto the gauge-respecting tangent space:
/// `P_U G P⊥ + G P_V − P_U G P_V`, with `P⊥ = I − 11ᵀ/d_m` acting on models.
pub fn tangent_project(g: &DMatrix<f64>, basis: &TangentBasis) -> DMatrix<f64> {
    let (u, v) = (&basis.u, &basis.v);
    let mut utg = u.transpose() * g;
    let gv = g * v;
    let utgv = &utg * v;
    center_rows_in_place(&mut utg);
    u * utg + (gv - u * utgv) * v.transpose()
}
