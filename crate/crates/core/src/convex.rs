//! Nuclear-norm penalized pairwise-logistic initializer.
//!
//! Minimizes `n⁻¹ Σ ℓ(Y_i, ⟨X_i, Θ⟩) + λ‖Θ‖_*` over matrices with centered
//! rows and entries in `[−B, B]` by accelerated proximal gradient: a gradient
//! step on the loss, singular-value soft-thresholding, and the Euclidean
//! projection onto the constraint set. A candidate is only accepted when it
//! lowers the objective; otherwise momentum is reset and a plain proximal step
//! is tried from the last accepted point.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_traits::Float;

use crate::linalg::{scale_columns, Svd};
use crate::model::{logistic_loss, project_rows_to_box, sigmoid};
use crate::{ComparisonDataset, ComparisonRecord, Error, Result, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ConvexConfig {
    /// Penalty weight; `None` selects [`default_lambda`].
    pub lambda: Option<f64>,
    /// Constant `c_λ` in the default penalty.
    pub lambda_scale: f64,
    /// Entrywise bound `B` (may be infinite).
    pub bound: f64,
    /// Truncation rank for [`truncate_and_clip`].
    pub rank: usize,
    pub max_iter: usize,
    /// Relative objective decrease below which the iteration stops.
    pub tol: f64,
    /// Initial step; `None` uses the inverse of a curvature bound.
    pub step_init: Option<f64>,
}

impl Default for ConvexConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            lambda_scale: 0.65,
            bound: 5.0,
            rank: 5,
            max_iter: 2000,
            tol: 1e-7,
            step_init: None,
        }
    }
}

/// Result of [`fit_convex`].
#[derive(Debug, Clone)]
pub struct ConvexFit {
    pub scores: ScoreMatrix,
    pub lambda: f64,
    /// Objective after every accepted iteration, starting at the zero matrix.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `c_λ · sqrt(log(d_t + d_m) / (n · min(d_t, d_m)))`.
pub fn default_lambda(dataset: &ComparisonDataset, lambda_scale: f64) -> f64 {
    let idx = dataset.index();
    let (dt, dm) = (idx.task_count() as f64, idx.model_count() as f64);
    let n = dataset.len().max(1) as f64;
    lambda_scale * Float::sqrt(Float::ln(dt + dm) / (n * dt.min(dm)))
}

/// Mean logistic loss of `theta` on `records`.
pub fn mean_loss(records: &[ComparisonRecord], theta: &DMatrix<f64>) -> f64 {
    records.iter().map(|r| logistic_loss(r.y(), r.eta(theta))).sum::<f64>() / records.len() as f64
}

/// Gradient `n⁻¹ Σ (σ(η_i) − Y_i) X_i` of [`mean_loss`].
pub fn loss_gradient(records: &[ComparisonRecord], theta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(theta.nrows(), theta.ncols());
    let inv_n = 1.0 / records.len() as f64;
    for r in records {
        let c = (sigmoid(r.eta(theta)) - r.y()) * inv_n;
        g[(r.task, r.model_a)] += c;
        g[(r.task, r.model_b)] -= c;
    }
    g
}

fn loss_and_gradient(records: &[ComparisonRecord], theta: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let mut g = DMatrix::zeros(theta.nrows(), theta.ncols());
    let inv_n = 1.0 / records.len() as f64;
    let mut loss = 0.0;
    for r in records {
        let eta = r.eta(theta);
        loss += logistic_loss(r.y(), eta);
        let c = (sigmoid(eta) - r.y()) * inv_n;
        g[(r.task, r.model_a)] += c;
        g[(r.task, r.model_b)] -= c;
    }
    (loss * inv_n, g)
}

/// Upper bound on the loss curvature: `¼ · max_t λ_max(L_t) / n`, with the
/// Laplacian eigenvalue bounded by twice the largest weighted degree.
fn curvature_bound(records: &[ComparisonRecord], task_count: usize, model_count: usize) -> f64 {
    let mut degree = alloc::vec![0usize; task_count * model_count];
    for r in records {
        degree[r.task * model_count + r.model_a] += 1;
        degree[r.task * model_count + r.model_b] += 1;
    }
    let max_deg = degree.into_iter().max().unwrap_or(1).max(1) as f64;
    0.25 * 2.0 * max_deg / records.len() as f64
}

/// Soft-thresholds the singular values of `m` at `level`. Returns the result
/// and its nuclear norm.
fn singular_value_threshold(m: &DMatrix<f64>, level: f64) -> Result<(DMatrix<f64>, f64)> {
    let svd = Svd::new(m)?;
    let kept: Vec<f64> = svd.singular_values.iter().map(|s| (s - level).max(0.0)).collect();
    let r = kept.iter().take_while(|&&s| s > 0.0).count();
    if r == 0 {
        return Ok((DMatrix::zeros(m.nrows(), m.ncols()), 0.0));
    }
    let (u, _, v) = svd.truncate(r);
    Ok((scale_columns(u, &kept[..r]) * v.transpose(), kept.iter().sum()))
}

fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(Svd::new(m)?.singular_values.iter().sum())
}

/// Penalized fit; returns the full (untruncated) optimum.
pub fn fit_convex(dataset: &ComparisonDataset, config: &ConvexConfig) -> Result<ConvexFit> {
    if dataset.is_empty() {
        return Err(Error::Empty("convex fit"));
    }
    let idx = dataset.index();
    let (dt, dm) = (idx.task_count(), idx.model_count());
    if config.rank == 0 || config.rank > dt.min(dm) {
        return Err(Error::InvalidArgument(alloc::format!("rank {} exceeds min(d_t, d_m) = {}", config.rank, dt.min(dm))));
    }
    if !(config.bound > 0.0) {
        return Err(Error::InvalidArgument("bound must be positive".into()));
    }
    let lambda = config.lambda.unwrap_or_else(|| default_lambda(dataset, config.lambda_scale));
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument("lambda must be finite and nonnegative".into()));
    }
    let records = dataset.records();
    let mut lip = match config.step_init {
        Some(s) if s > 0.0 => 1.0 / s,
        _ => curvature_bound(records, dt, dm),
    };

    let mut x = DMatrix::zeros(dt, dm);
    let mut fx = mean_loss(records, &x);
    let mut objective = alloc::vec![fx];
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut plain_step = false;

    while iterations < config.max_iter {
        iterations += 1;
        let (fy, gy) = loss_and_gradient(records, &y);
        // Backtracking on the quadratic upper model of the loss.
        let (cand, cand_loss, cand_nuc) = loop {
            let step = 1.0 / lip;
            let (mut z, _) = singular_value_threshold(&(&y - &gy * step), step * lambda)?;
            project_rows_to_box(&mut z, config.bound);
            let diff = &z - &y;
            let fz = mean_loss(records, &z);
            if !fz.is_finite() {
                return Err(Error::Diverged { iteration: iterations, step, objective: fz });
            }
            if fz <= fy + gy.dot(&diff) + 0.5 * lip * diff.norm_squared() + 1e-15 * fy.abs() {
                let nuc = if lambda > 0.0 { nuclear_norm(&z)? } else { 0.0 };
                break (z, fz, nuc);
            }
            lip *= 2.0;
            if !lip.is_finite() {
                return Err(Error::Diverged { iteration: iterations, step: 0.0, objective: fz });
            }
        };
        let f_cand = cand_loss + lambda * cand_nuc;
        if !f_cand.is_finite() {
            return Err(Error::Diverged { iteration: iterations, step: 1.0 / lip, objective: f_cand });
        }
        if f_cand <= fx {
            let decrease = (fx - f_cand) / fx.abs().max(1e-12);
            let next_momentum = 0.5 * (1.0 + Float::sqrt(1.0 + 4.0 * momentum * momentum));
            y = &cand + (&cand - &x) * ((momentum - 1.0) / next_momentum);
            momentum = next_momentum;
            x = cand;
            fx = f_cand;
            objective.push(fx);
            plain_step = false;
            if decrease < config.tol {
                converged = true;
                break;
            }
        } else if plain_step {
            // Even a plain proximal step from the accepted point fails to descend.
            converged = true;
            break;
        } else {
            y = x.clone();
            momentum = 1.0;
            plain_step = true;
        }
    }
    project_rows_to_box(&mut x, config.bound);
    Ok(ConvexFit {
        scores: ScoreMatrix::new(dataset.index().clone(), x)?,
        lambda,
        objective,
        iterations,
        converged,
    })
}

/// Best rank-`r` approximation followed by the projection onto centered rows
/// with entries in `[−B, B]`.
pub fn truncate_and_clip(m: &ScoreMatrix, rank: usize, bound: f64) -> Result<ScoreMatrix> {
    let v = m.values();
    if rank == 0 || rank > v.nrows().min(v.ncols()) {
        return Err(Error::InvalidArgument(alloc::format!("rank {rank} out of range")));
    }
    let mut low = Svd::new(v)?.low_rank(rank);
    project_rows_to_box(&mut low, bound);
    ScoreMatrix::new(m.index().clone(), low)
}
