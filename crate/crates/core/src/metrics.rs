//! Top-K recovery metrics.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::model::top_k_set;
use crate::{Error, Result, ScoreMatrix};

fn check(est: &ScoreMatrix, truth: &ScoreMatrix, k: usize) -> Result<()> {
    let (a, b) = (est.index(), truth.index());
    if a.task_count() != b.task_count() || a.model_count() != b.model_count() {
        return Err(Error::DimensionMismatch("score matrices index different tasks or models".into()));
    }
    check_k(truth, k)
}

fn check_k(truth: &ScoreMatrix, k: usize) -> Result<()> {
    let dm = truth.index().model_count();
    if k == 0 || k >= dm {
        return Err(Error::InvalidArgument(format!("K = {k} must lie in [1, {dm})")));
    }
    Ok(())
}

/// Normalized symmetric difference `|Ŝ △ S| / (2K)` of the top-K sets, per task.
pub fn hamming_topk(est: &ScoreMatrix, truth: &ScoreMatrix, k: usize) -> Result<Vec<f64>> {
    check(est, truth, k)?;
    Ok((0..truth.index().task_count())
        .map(|t| {
            let s_hat = top_k_set(&est.row(t), k);
            let s = top_k_set(&truth.row(t), k);
            let common = s_hat.iter().filter(|m| s.binary_search(m).is_ok()).count();
            (2 * (k - common)) as f64 / (2 * k) as f64
        })
        .collect())
}

/// Midpoint between the K-th and (K+1)-th largest entries of `row`.
pub fn topk_threshold(row: &[f64], k: usize) -> f64 {
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    0.5 * (sorted[k - 1] + sorted[k])
}

/// Share `|{m : |Θ[t,m] − τ_K(t)| ≤ δ}| / (2K)` of models near the top-K
/// threshold, per task.
pub fn boundary_profile(truth: &ScoreMatrix, k: usize, delta: f64) -> Result<Vec<f64>> {
    check_k(truth, k)?;
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} must be nonnegative")));
    }
    Ok((0..truth.index().task_count())
        .map(|t| {
            let row = truth.row(t);
            let tau = topk_threshold(&row, k);
            let near = row.iter().filter(|&&x| Float::abs(x - tau) <= delta).count();
            near as f64 / (2 * k) as f64
        })
        .collect())
}

/// Per-task check of `Ham_K(est, truth) ≤ R_K(truth, 2ε)`, which holds for any
/// pair with `‖est − truth‖_∞ ≤ ε`.
pub fn hamming_boundary_check(est: &ScoreMatrix, truth: &ScoreMatrix, k: usize, eps: f64) -> Result<Vec<bool>> {
    let ham = hamming_topk(est, truth, k)?;
    let profile = boundary_profile(truth, k, 2.0 * eps)?;
    Ok(ham.iter().zip(&profile).map(|(h, r)| h <= r).collect())
}
