use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::model::logistic_weight;
use crate::{ComparisonRecord, Error, Result, ScoreMatrix};

/// Empirical Fisher operator
/// `Ĝ(H) = n⁻¹ Σ_i I(η̂_i) (H[t_i,a_i] − H[t_i,b_i]) X_i`,
/// stored as one weighted `(task, a, b)` term per record.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherOperator {
    task_count: usize,
    model_count: usize,
    terms: Vec<(usize, usize, usize, f64)>,
}

impl FisherOperator {
    /// Weights `I(η̂_i)/n` evaluated at `theta`.
    pub fn new(records: &[ComparisonRecord], theta: &ScoreMatrix) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("Fisher operator records"));
        }
        let th = theta.values();
        let n = records.len() as f64;
        let terms = records
            .iter()
            .map(|r| (r.task, r.model_a, r.model_b, logistic_weight(r.eta(th)) / n))
            .collect();
        Ok(Self { task_count: th.nrows(), model_count: th.ncols(), terms })
    }

    /// Every record weighted by `weight / n`, independent of any fit.
    pub fn constant(records: &[ComparisonRecord], task_count: usize, model_count: usize, weight: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("Fisher operator records"));
        }
        let n = records.len() as f64;
        let terms = records.iter().map(|r| (r.task, r.model_a, r.model_b, weight / n)).collect();
        Ok(Self { task_count, model_count, terms })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.task_count, self.model_count)
    }

    pub fn apply(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.task_count, self.model_count);
        for &(t, a, b, w) in &self.terms {
            let c = w * (h[(t, a)] - h[(t, b)]);
            out[(t, a)] += c;
            out[(t, b)] -= c;
        }
        out
    }

    /// Per-task weighted graph Laplacians `L_t = Σ_{i: t_i = t} w_i (e_a − e_b)(e_a − e_b)ᵀ`,
    /// so that `⟨H, Ĝ H⟩ = Σ_t H[t,·] L_t H[t,·]ᵀ`.
    pub fn row_laplacians(&self) -> Vec<DMatrix<f64>> {
        let mut out = alloc::vec![DMatrix::zeros(self.model_count, self.model_count); self.task_count];
        for &(t, a, b, w) in &self.terms {
            let l = &mut out[t];
            l[(a, a)] += w;
            l[(b, b)] += w;
            l[(a, b)] -= w;
            l[(b, a)] -= w;
        }
        out
    }
}

/// One-shot application of the Fisher operator built from `records` at `theta`.
pub fn fisher_apply(h: &DMatrix<f64>, records: &[ComparisonRecord], theta: &ScoreMatrix) -> Result<DMatrix<f64>> {
    Ok(FisherOperator::new(records, theta)?.apply(h))
}
