//! Split-sample refinement of a low-rank initializer.
//!
//! Stage A factors the initializer as `L Rᵀ` and caps the row norms of the
//! right factor. Stage B re-estimates each task row of `L` by an
//! `r`-dimensional logistic regression on fresh comparisons, with the
//! opponent's current score as an offset. Stage C does the same for each model
//! row of `R` on a third sample. The right factor carries the row gauge, so the
//! final product has centered rows.

use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::convex::{fit_convex, truncate_and_clip, ConvexConfig};
use crate::linalg::{orthonormalize, scale_columns, Svd};
use crate::model::{center_rows_in_place, logistic_loss, logistic_weight, project_rows_to_box, sigmoid};
use crate::split::assign_folds;
use crate::{ComparisonDataset, ComparisonRecord, Error, FactoredScores, Result, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RefineConfig {
    pub rank: usize,
    /// Right-factor rows are capped at `incoherence_cap / sqrt(d_m)` in norm.
    pub incoherence_cap: f64,
    pub newton_max_iter: usize,
    /// A row is converged once `‖score‖ < newton_tol · (number of terms)`.
    pub newton_tol: f64,
    /// Entrywise bound applied to the final product.
    pub bound: f64,
    /// Number of Stage B / Stage C sweeps.
    pub passes: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            incoherence_cap: 4.0,
            newton_max_iter: 50,
            newton_tol: 1e-8,
            bound: 5.0,
            passes: 1,
        }
    }
}

/// Record positions used by Stage B and Stage C.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefineSplits {
    pub stage_b: Vec<usize>,
    pub stage_c: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RefineDiagnostics {
    /// Tasks whose Stage B solve did not converge (kept at the previous value).
    pub nonconverged_rows: Vec<usize>,
    /// Models whose Stage C solve did not converge (kept at the previous value).
    pub nonconverged_columns: Vec<usize>,
    /// Right-factor rows rescaled by the incoherence cap in Stage A.
    pub capped_rows: usize,
}

#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub scores: ScoreMatrix,
    pub factors: FactoredScores,
    pub diagnostics: RefineDiagnostics,
}

/// Logistic regression with offsets: minimizes `Σ ℓ(y_j, x_jᵀθ − o_j)`.
#[derive(Debug, Clone, Default)]
pub struct OffsetLogistic {
    dim: usize,
    x: Vec<f64>,
    offset: Vec<f64>,
    y: Vec<f64>,
}

impl OffsetLogistic {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Default::default() }
    }

    pub fn push(&mut self, x: impl IntoIterator<Item = f64>, offset: f64, y: f64) {
        let before = self.x.len();
        self.x.extend(x);
        debug_assert_eq!(self.x.len() - before, self.dim);
        self.offset.push(offset);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn eta(&self, j: usize, theta: &DVector<f64>) -> f64 {
        let row = &self.x[j * self.dim..(j + 1) * self.dim];
        row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum::<f64>() - self.offset[j]
    }

    pub fn loss(&self, theta: &DVector<f64>) -> f64 {
        (0..self.len()).map(|j| logistic_loss(self.y[j], self.eta(j, theta))).sum()
    }

    /// Score `Σ x_j (y_j − σ(η_j))`.
    pub fn score(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut s = DVector::zeros(self.dim);
        for j in 0..self.len() {
            let c = self.y[j] - sigmoid(self.eta(j, theta));
            for k in 0..self.dim {
                s[k] += c * self.x[j * self.dim + k];
            }
        }
        s
    }

    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for j in 0..self.len() {
            let w = logistic_weight(self.eta(j, theta));
            let row = &self.x[j * self.dim..(j + 1) * self.dim];
            for a in 0..self.dim {
                for b in 0..self.dim {
                    h[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        h
    }

    /// Damped Newton from `start`. Returns the final iterate and whether the
    /// score fell below `tol · len()`.
    pub fn solve(&self, start: &DVector<f64>, max_iter: usize, tol: f64) -> (DVector<f64>, bool) {
        let mut theta = start.clone();
        if self.is_empty() {
            return (theta, true);
        }
        let threshold = tol * self.len() as f64;
        let mut f = self.loss(&theta);
        for _ in 0..max_iter {
            let s = self.score(&theta);
            if s.norm() < threshold {
                return (theta, true);
            }
            let h = self.hessian(&theta);
            let step = match nalgebra::linalg::Cholesky::new(h.clone()) {
                Some(c) => c.solve(&s),
                None => {
                    let curvature = 0.25 * self.x.iter().map(|v| v * v).sum::<f64>();
                    &s / curvature.max(1e-300)
                }
            };
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..=30 {
                let cand = &theta + &step * scale;
                let fc = self.loss(&cand);
                if fc.is_finite() && fc <= f {
                    theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let ok = self.score(&theta).norm() < threshold;
        (theta, ok)
    }
}

/// Stage A: rank-`r` factorization `L Rᵀ` of the re-centered initializer with
/// `L = UΣ`, `R = V`, rows of `R` capped at `cap / sqrt(d_m)` and the columns
/// of `R` centered afterwards. When the initializer has rank below `r` the
/// missing right directions are completed orthogonally and start with zero
/// loadings. Returns the factors and the number of capped rows.
pub fn stage_a_right_factor(init: &ScoreMatrix, rank: usize, cap: f64) -> Result<(FactoredScores, usize)> {
    let mut m = init.values().clone();
    center_rows_in_place(&mut m);
    let svd = Svd::new(&m)?;
    if rank == 0 || rank > svd.singular_values.len() {
        return Err(Error::InvalidArgument(alloc::format!("rank {rank} out of range")));
    }
    let (u, s, mut v) = svd.truncate(rank);
    let live = s.iter().filter(|&&x| x > 1e-12 * s[0].max(1.0)).count();
    if live < rank {
        complete_right_factor(&mut v, &svd.v, live);
    }
    let dm = v.nrows();
    let limit = cap / Float::sqrt(dm as f64);
    let mut capped = 0;
    for i in 0..dm {
        let norm = v.row(i).norm();
        if norm > limit {
            v.row_mut(i).scale_mut(limit / norm);
            capped += 1;
        }
    }
    center_columns(&mut v);
    Ok((FactoredScores::new(Arc::clone(init.index()), scale_columns(u, &s), v)?, capped))
}

/// Replaces columns `live..` of `v` (directions of null singular values) by
/// orthonormal directions orthogonal to the kept columns and to the all-ones
/// vector, drawn from the remaining right singular vectors.
fn complete_right_factor(v: &mut DMatrix<f64>, all: &DMatrix<f64>, live: usize) {
    let dm = v.nrows();
    let mut against: Vec<DVector<f64>> = alloc::vec![DVector::from_element(dm, 1.0 / Float::sqrt(dm as f64))];
    against.extend((0..live).map(|j| v.column(j).into_owned()));
    let pool = DMatrix::from_fn(dm, all.ncols() + dm, |i, j| {
        if j < all.ncols() {
            all[(i, j)]
        } else {
            f64::from(u8::from(i == j - all.ncols()))
        }
    });
    let extra = orthonormalize(&pool.columns(live, pool.ncols() - live).into_owned(), &against);
    for j in live..v.ncols() {
        v.set_column(j, &extra.column(j - live));
    }
}

fn center_columns(m: &mut DMatrix<f64>) {
    let d = m.nrows() as f64;
    for mut c in m.column_iter_mut() {
        let mean = c.sum() / d;
        c.add_scalar_mut(-mean);
    }
}

/// Stage B: for each task, regress the comparisons on the right-factor rows.
/// Every comparison enters once per side: the left model's row as covariate
/// with the opponent's current score as offset, and symmetrically with the
/// outcome complemented. Returns the new left factor and the tasks that did
/// not converge.
pub fn stage_b_left_update(
    factors: &FactoredScores,
    current: &DMatrix<f64>,
    records: &[ComparisonRecord],
    config: &RefineConfig,
) -> (DMatrix<f64>, Vec<usize>) {
    let (left, right) = (factors.left(), factors.right());
    let r = factors.rank();
    let mut problems: Vec<OffsetLogistic> = (0..left.nrows()).map(|_| OffsetLogistic::new(r)).collect();
    for rec in records {
        let t = rec.task;
        for side in [*rec, rec.flipped()] {
            problems[t].push(right.row(side.model_a).iter().copied(), current[(t, side.model_b)], side.y());
        }
    }
    let mut out = left.clone();
    let mut failed = Vec::new();
    for (t, prob) in problems.iter().enumerate() {
        if prob.is_empty() {
            continue;
        }
        let start = left.row(t).transpose();
        let (theta, ok) = prob.solve(&start, config.newton_max_iter, config.newton_tol);
        if ok && theta.iter().all(|v| v.is_finite()) {
            out.set_row(t, &theta.transpose());
        } else {
            failed.push(t);
        }
    }
    (out, failed)
}

/// Stage C: for each model, regress its comparisons (oriented so the model is
/// on the left) on the task rows of `left`, with the opponent's score in
/// `current` as offset. Starts from the rows of `right` and centers the
/// columns of the result.
pub fn stage_c_column_update(
    left: &DMatrix<f64>,
    right: &DMatrix<f64>,
    current: &DMatrix<f64>,
    records: &[ComparisonRecord],
    config: &RefineConfig,
) -> (DMatrix<f64>, Vec<usize>) {
    let r = left.ncols();
    let mut problems: Vec<OffsetLogistic> = (0..right.nrows()).map(|_| OffsetLogistic::new(r)).collect();
    for rec in records {
        for side in [*rec, rec.flipped()] {
            problems[side.model_a].push(left.row(side.task).iter().copied(), current[(side.task, side.model_b)], side.y());
        }
    }
    let mut out = right.clone();
    let mut failed = Vec::new();
    for (m, prob) in problems.iter().enumerate() {
        if prob.is_empty() {
            continue;
        }
        let start = right.row(m).transpose();
        let (a, ok) = prob.solve(&start, config.newton_max_iter, config.newton_tol);
        if ok && a.iter().all(|v| v.is_finite()) {
            out.set_row(m, &a.transpose());
        } else {
            failed.push(m);
        }
    }
    center_columns(&mut out);
    (out, failed)
}

/// Runs Stage A and then `config.passes` sweeps of Stages B and C, and
/// returns the bounded, centered product.
pub fn refine(init: &ScoreMatrix, dataset: &ComparisonDataset, splits: &RefineSplits, config: &RefineConfig) -> Result<RefineOutput> {
    for &i in splits.stage_b.iter().chain(&splits.stage_c) {
        if i >= dataset.len() {
            return Err(Error::InvalidArgument(alloc::format!("split references record {i}")));
        }
    }
    if splits.stage_b.is_empty() || splits.stage_c.is_empty() {
        return Err(Error::Empty("refinement split"));
    }
    let index = Arc::clone(dataset.index());
    let (factors, capped_rows) = stage_a_right_factor(init, config.rank, config.incoherence_cap)?;
    let records_b: Vec<ComparisonRecord> = splits.stage_b.iter().map(|&i| dataset.records()[i]).collect();
    let records_c: Vec<ComparisonRecord> = splits.stage_c.iter().map(|&i| dataset.records()[i]).collect();

    let mut left = factors.left().clone();
    let mut right = factors.right().clone();
    let mut current = &left * right.transpose();
    let mut diagnostics = RefineDiagnostics { capped_rows, ..Default::default() };
    for _ in 0..config.passes.max(1) {
        let f = FactoredScores::new(Arc::clone(&index), left, right.clone())?;
        let (l, rows) = stage_b_left_update(&f, &current, &records_b, config);
        left = l;
        current = &left * right.transpose();
        let (rt, cols) = stage_c_column_update(&left, &right, &current, &records_c, config);
        right = rt;
        current = &left * right.transpose();
        diagnostics.nonconverged_rows = rows;
        diagnostics.nonconverged_columns = cols;
    }
    let factors = FactoredScores::new(Arc::clone(&index), left, right)?;
    let mut values = current;
    center_rows_in_place(&mut values);
    project_rows_to_box(&mut values, config.bound);
    Ok(RefineOutput { scores: ScoreMatrix::new(index, values)?, factors, diagnostics })
}

/// How the sample is shared between the initializer and the refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SplitMode {
    /// Three disjoint random thirds for the initializer, Stage B and Stage C.
    ThreeWay,
    /// Every stage uses the full sample.
    Shared,
}

/// Full joint estimator: penalized initializer, truncation, refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JointConfig {
    pub convex: ConvexConfig,
    pub refine: RefineConfig,
    pub split_mode: SplitMode,
    pub seed: u64,
}

impl JointConfig {
    /// Defaults with rank and entrywise bound set consistently.
    pub fn new(rank: usize, bound: f64) -> Self {
        Self {
            convex: ConvexConfig { rank, bound, ..Default::default() },
            refine: RefineConfig { rank, bound, ..Default::default() },
            split_mode: SplitMode::Shared,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointFit {
    pub scores: ScoreMatrix,
    pub factors: FactoredScores,
    /// Truncated initializer handed to the refinement.
    pub init: ScoreMatrix,
    pub convex_iterations: usize,
    pub convex_converged: bool,
    pub lambda: f64,
    pub diagnostics: RefineDiagnostics,
}

pub fn fit_joint(dataset: &ComparisonDataset, config: &JointConfig) -> Result<JointFit> {
    let n = dataset.len();
    let (init_part, splits) = match config.split_mode {
        SplitMode::ThreeWay => {
            let folds = assign_folds(n, 3, config.seed)?;
            (dataset.select(&folds.fold(0)), RefineSplits { stage_b: folds.fold(1), stage_c: folds.fold(2) })
        }
        SplitMode::Shared => {
            if n == 0 {
                return Err(Error::Empty("joint fit"));
            }
            let all: Vec<usize> = (0..n).collect();
            (dataset.clone(), RefineSplits { stage_b: all.clone(), stage_c: all })
        }
    };
    let convex = fit_convex(&init_part, &config.convex)?;
    let init = truncate_and_clip(&convex.scores, config.refine.rank, config.refine.bound)?;
    let out = refine(&init, dataset, &splits, &config.refine)?;
    Ok(JointFit {
        scores: out.scores,
        factors: out.factors,
        init,
        convex_iterations: convex.iterations,
        convex_converged: convex.converged,
        lambda: convex.lambda,
        diagnostics: out.diagnostics,
    })
}
