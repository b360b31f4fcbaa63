use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_traits::Float;

use super::ContrastSpec;
use crate::{Result, TaskModelIndex};

/// A contrast estimate with its per-observation influence values.
#[derive(Debug, Clone, PartialEq)]
pub struct GapInference {
    pub contrast: ContrastSpec,
    pub estimate: f64,
    /// `sqrt(mean(influence²) / n)`.
    pub std_error: f64,
    pub influence: Vec<f64>,
}

/// A contrast estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GapEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Anything that maps a contrast to an estimate and per-observation influence
/// values. Implemented by the cross-fitted joint estimator and by the per-task
/// Wald baseline, so the bootstrap and certification code is shared.
pub trait InfluenceMap: Sync {
    fn index(&self) -> &TaskModelIndex;

    /// Number of observations `n` the influence values are indexed by.
    fn sample_size(&self) -> usize;

    /// `⟨Γ, Θ̂⟩`.
    fn plug_in(&self, contrast: &ContrastSpec) -> Result<f64>;

    /// `φ_Γ(W_i)` for every observation, in dataset order.
    fn influence(&self, contrast: &ContrastSpec) -> Result<Vec<f64>>;

    /// Whether the reported estimate adds the mean influence to the plug-in.
    fn debiased(&self) -> bool {
        true
    }

    /// The matrix `Y(w)` with `⟨Γ, Y(w)⟩ = Σ_i w_i φ_Γ(W_i)` for every contrast
    /// the map supports. Lets a bootstrap replicate be evaluated for a whole
    /// family at once.
    fn weighted_sum(&self, weights: &[f64]) -> DMatrix<f64>;

    fn infer(&self, contrast: &ContrastSpec) -> Result<GapInference> {
        let influence = self.influence(contrast)?;
        let n = influence.len() as f64;
        let mean = influence.iter().sum::<f64>() / n;
        let second = influence.iter().map(|x| x * x).sum::<f64>() / n;
        let shift = if self.debiased() { mean } else { 0.0 };
        Ok(GapInference {
            contrast: contrast.clone(),
            estimate: self.plug_in(contrast)? + shift,
            std_error: Float::sqrt(second / n),
            influence,
        })
    }

    /// Estimates and standard errors for a family. Implementations may use a
    /// faster route than materializing the influence vectors.
    fn summarize(&self, contrasts: &[ContrastSpec]) -> Vec<Result<GapEstimate>> {
        contrasts
            .iter()
            .map(|c| self.infer(c).map(|g| GapEstimate { estimate: g.estimate, std_error: g.std_error }))
            .collect()
    }

    /// `Σ̂_jk = n⁻¹ Σ_i φ_j(W_i) φ_k(W_i)`.
    fn covariance(&self, contrasts: &[ContrastSpec]) -> Result<DMatrix<f64>> {
        let phis = contrasts.iter().map(|c| self.influence(c)).collect::<Result<Vec<_>>>()?;
        let n = self.sample_size() as f64;
        let p = contrasts.len();
        Ok(DMatrix::from_fn(p, p, |j, k| {
            phis[j].iter().zip(&phis[k]).map(|(a, b)| a * b).sum::<f64>() / n
        }))
    }
}
