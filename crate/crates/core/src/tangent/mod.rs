//! Debiased inference for linear contrasts of the score matrix.
//!
//! A contrast `Γ` defines the target `ψ_Γ = ⟨Γ, Θ⟩`. Given a rank-r fit `Θ̂`
//! with tangent space `T`, the efficient direction `Ĥ_Γ` solves
//! `(P_T Ĝ P_T) Ĥ_Γ = P_T Γ`, where `Ĝ` is the empirical Fisher operator, and
//! the one-step estimator adds the average of `(Y_i − σ(η̂_i))·⟨Ĥ_Γ, X_i⟩` to
//! the plug-in `⟨Γ, Θ̂⟩`. Nuisances are cross-fitted.
//!
//! Two solvers are provided for the efficient direction: conjugate gradients
//! on operator applications ([`solve_efficient_direction`]) and a direct solve
//! in orthonormal tangent coordinates ([`TangentSystem`]), which is what the
//! cross-fitting code uses.

mod crossfit;
mod fisher;
mod influence;
mod projector;
mod solve;

pub use crossfit::{one_step_estimate, CrossFit, CrossFitOptions, OneStepResult, SplitPlan};
pub use fisher::{fisher_apply, FisherOperator};
pub use influence::{GapEstimate, GapInference, InfluenceMap};
pub use projector::{tangent_project, TangentBasis};
pub use solve::{solve_efficient_direction, solve_efficient_direction_dense, CgOptions, TangentSystem};

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::{Error, Result, TaskModelIndex};

/// Sparse matrix `Γ` given as `(task, model, weight)` triples.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContrastSpec {
    entries: Vec<(usize, usize, f64)>,
}

impl ContrastSpec {
    pub fn new(entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("a contrast needs at least one entry".into()));
        }
        if entries.iter().any(|e| !e.2.is_finite()) {
            return Err(Error::NonFinite("contrast weights"));
        }
        Ok(Self { entries })
    }

    /// `e_t (e_a − e_b)ᵀ`, the score gap `Θ[t,a] − Θ[t,b]`.
    pub fn gap(task: usize, a: usize, b: usize) -> Self {
        Self { entries: alloc::vec![(task, a, 1.0), (task, b, -1.0)] }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `(task, a, b)` when the contrast is a canonical score gap.
    pub fn as_gap(&self) -> Option<(usize, usize, usize)> {
        match self.entries.as_slice() {
            [(t, a, wa), (u, b, wb)] if t == u && *wa == 1.0 && *wb == -1.0 => Some((*t, *a, *b)),
            _ => None,
        }
    }

    pub fn validate(&self, index: &TaskModelIndex) -> Result<()> {
        for &(t, m, _) in &self.entries {
            if t >= index.task_count() || m >= index.model_count() {
                return Err(Error::InvalidArgument(format!("contrast entry ({t}, {m}) out of range")));
            }
        }
        Ok(())
    }

    /// `⟨Γ, M⟩`.
    pub fn dot(&self, m: &DMatrix<f64>) -> f64 {
        self.entries.iter().map(|&(t, j, w)| w * m[(t, j)]).sum()
    }

    pub fn to_dense(&self, task_count: usize, model_count: usize) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(task_count, model_count);
        for &(t, m, w) in &self.entries {
            g[(t, m)] += w;
        }
        g
    }

    /// Tasks touched by the contrast, ascending and deduplicated.
    pub fn tasks(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.entries.iter().map(|e| e.0).collect();
        t.sort_unstable();
        t.dedup();
        t
    }
}
