//! Domain types and the BTL link.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_traits::Float;

use crate::{Error, Result};

/// Absolute gauge tolerance per model: a row passes if `|sum| <= GAUGE_TOL * d_m`.
pub const GAUGE_TOL: f64 = 1e-8;

/// Task and model dictionaries.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskModelIndex {
    task_names: Vec<String>,
    model_names: Vec<String>,
}

fn padded_names(prefix: &str, count: usize) -> Vec<String> {
    let width = format!("{}", count.saturating_sub(1)).len();
    (0..count).map(|i| format!("{prefix}_{i:0width$}")).collect()
}

impl TaskModelIndex {
    pub fn new(task_names: Vec<String>, model_names: Vec<String>) -> Result<Self> {
        if task_names.is_empty() {
            return Err(Error::InvalidArgument("at least one task is required".into()));
        }
        if model_names.len() < 2 {
            return Err(Error::InvalidArgument("at least two models are required".into()));
        }
        for (kind, names) in [("task", &task_names), ("model", &model_names)] {
            let mut sorted: Vec<&String> = names.iter().collect();
            sorted.sort();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!("duplicate {kind} name {:?}", w[0])));
            }
        }
        Ok(Self { task_names, model_names })
    }

    /// Index with generated names `task_0, …` and `model_0, …`, zero-padded to a
    /// common width so that alphabetical and numeric order agree.
    pub fn anonymous(task_count: usize, model_count: usize) -> Result<Self> {
        Self::new(
            padded_names("task", task_count),
            padded_names("model", model_count),
        )
    }

    pub fn task_count(&self) -> usize {
        self.task_names.len()
    }

    pub fn model_count(&self) -> usize {
        self.model_names.len()
    }

    /// `d_t * d_m`.
    pub fn cell_count(&self) -> usize {
        self.task_count() * self.model_count()
    }

    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    pub fn model_names(&self) -> &[String] {
        &self.model_names
    }

    pub fn task_id(&self, name: &str) -> Option<usize> {
        self.task_names.iter().position(|n| n == name)
    }

    pub fn model_id(&self, name: &str) -> Option<usize> {
        self.model_names.iter().position(|n| n == name)
    }
}

/// One pairwise comparison. `outcome == true` means `model_a` was preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComparisonRecord {
    pub task: usize,
    pub model_a: usize,
    pub model_b: usize,
    pub outcome: bool,
}

impl ComparisonRecord {
    pub fn new(task: usize, model_a: usize, model_b: usize, outcome: bool) -> Self {
        Self { task, model_a, model_b, outcome }
    }

    /// Outcome as 0.0 / 1.0.
    #[inline]
    pub fn y(&self) -> f64 {
        if self.outcome {
            1.0
        } else {
            0.0
        }
    }

    /// Linear predictor `Θ[t,a] − Θ[t,b]`.
    #[inline]
    pub fn eta(&self, theta: &DMatrix<f64>) -> f64 {
        theta[(self.task, self.model_a)] - theta[(self.task, self.model_b)]
    }

    /// Same comparison with the sides swapped and the outcome complemented.
    pub fn flipped(&self) -> Self {
        Self {
            task: self.task,
            model_a: self.model_b,
            model_b: self.model_a,
            outcome: !self.outcome,
        }
    }

    /// The record oriented so `model` is on the left, if it takes part.
    pub fn oriented_for(&self, model: usize) -> Option<Self> {
        if self.model_a == model {
            Some(*self)
        } else if self.model_b == model {
            Some(self.flipped())
        } else {
            None
        }
    }

    pub fn validate(&self, index: &TaskModelIndex) -> Result<()> {
        if self.task >= index.task_count()
            || self.model_a >= index.model_count()
            || self.model_b >= index.model_count()
        {
            return Err(Error::InvalidArgument(format!("record {self:?} is out of range")));
        }
        if self.model_a == self.model_b {
            return Err(Error::InvalidArgument(format!("record {self:?} compares a model with itself")));
        }
        Ok(())
    }
}

/// A validated list of comparisons over a shared index.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonDataset {
    index: Arc<TaskModelIndex>,
    records: Vec<ComparisonRecord>,
}

impl ComparisonDataset {
    pub fn new(index: Arc<TaskModelIndex>, records: Vec<ComparisonRecord>) -> Result<Self> {
        for r in &records {
            r.validate(&index)?;
        }
        Ok(Self { index, records })
    }

    pub fn index(&self) -> &Arc<TaskModelIndex> {
        &self.index
    }

    pub fn records(&self) -> &[ComparisonRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Dataset restricted to the given record positions (in the given order).
    pub fn select(&self, positions: &[usize]) -> Self {
        Self {
            index: Arc::clone(&self.index),
            records: positions.iter().map(|&i| self.records[i]).collect(),
        }
    }

    pub fn into_records(self) -> Vec<ComparisonRecord> {
        self.records
    }
}

fn check_shape(index: &TaskModelIndex, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != index.task_count() || m.ncols() != index.model_count() {
        return Err(Error::DimensionMismatch(format!(
            "expected {}x{}, got {}x{}",
            index.task_count(),
            index.model_count(),
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Dense task-by-model scores satisfying the row gauge.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    index: Arc<TaskModelIndex>,
    values: DMatrix<f64>,
}

impl ScoreMatrix {
    /// Validates shape, finiteness and the row gauge.
    pub fn new(index: Arc<TaskModelIndex>, values: DMatrix<f64>) -> Result<Self> {
        check_shape(&index, &values)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score matrix"));
        }
        let tol = GAUGE_TOL * values.ncols() as f64;
        for (row, r) in values.row_iter().enumerate() {
            let sum = r.sum();
            if sum.abs() > tol {
                return Err(Error::GaugeViolation { row, sum });
            }
        }
        Ok(Self { index, values })
    }

    pub fn zeros(index: Arc<TaskModelIndex>) -> Self {
        let values = DMatrix::zeros(index.task_count(), index.model_count());
        Self { index, values }
    }

    pub fn index(&self) -> &Arc<TaskModelIndex> {
        &self.index
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, task: usize, model: usize) -> f64 {
        self.values[(task, model)]
    }

    /// `Θ[t,a] − Θ[t,b]`.
    #[inline]
    pub fn gap(&self, task: usize, a: usize, b: usize) -> f64 {
        self.values[(task, a)] - self.values[(task, b)]
    }

    pub fn row(&self, task: usize) -> Vec<f64> {
        self.values.row(task).iter().copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.amax()
    }

    pub fn max_abs_distance(&self, other: &ScoreMatrix) -> f64 {
        (&self.values - &other.values).amax()
    }

    pub fn frobenius_distance(&self, other: &ScoreMatrix) -> f64 {
        (&self.values - &other.values).norm()
    }
}

/// Rank-r factor pair `left · rightᵀ`. The right factor carries the gauge:
/// its columns sum to zero, so every row of the product is centered.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredScores {
    index: Arc<TaskModelIndex>,
    left: DMatrix<f64>,
    right: DMatrix<f64>,
}

impl FactoredScores {
    pub fn new(index: Arc<TaskModelIndex>, left: DMatrix<f64>, right: DMatrix<f64>) -> Result<Self> {
        let r = left.ncols();
        if r == 0 || right.ncols() != r {
            return Err(Error::DimensionMismatch("factor ranks differ or are zero".into()));
        }
        if left.nrows() != index.task_count() || right.nrows() != index.model_count() {
            return Err(Error::DimensionMismatch("factor row counts do not match the index".into()));
        }
        if left.iter().chain(right.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("factor matrices"));
        }
        let tol = GAUGE_TOL * right.nrows() as f64;
        for (k, col) in right.column_iter().enumerate() {
            let sum = col.sum();
            if sum.abs() > tol {
                return Err(Error::GaugeViolation { row: k, sum });
            }
        }
        Ok(Self { index, left, right })
    }

    pub fn index(&self) -> &Arc<TaskModelIndex> {
        &self.index
    }

    pub fn rank(&self) -> usize {
        self.left.ncols()
    }

    pub fn left(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn right(&self) -> &DMatrix<f64> {
        &self.right
    }

    /// `left · rightᵀ` with the rows re-centered to absorb rounding.
    pub fn product(&self) -> ScoreMatrix {
        recenter_rows(Arc::clone(&self.index), &(&self.left * self.right.transpose()))
    }
}

/// Logistic function without input checks.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + Float::exp(-x))
    } else {
        let e = Float::exp(x);
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` as `max(x, 0) + log1p(e^{-|x|})`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + Float::ln_1p(Float::exp(-Float::abs(x)))
}

/// Logistic loss `softplus(eta) − y·eta` for `y ∈ [0, 1]`, unchecked.
#[inline]
pub fn logistic_loss(y: f64, eta: f64) -> f64 {
    softplus(eta) - y * eta
}

/// `σ(x)(1 − σ(x))`, unchecked.
#[inline]
pub fn logistic_weight(x: f64) -> f64 {
    let e = Float::exp(-Float::abs(x));
    e / ((1.0 + e) * (1.0 + e))
}

fn finite(x: f64, what: &'static str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Probability that the left model wins at score difference `eta`.
pub fn btl_prob(eta: f64) -> Result<f64> {
    finite(eta, "btl_prob argument").map(sigmoid)
}

/// Negative log-likelihood of outcome `y` at score difference `eta`.
pub fn btl_loss(y: bool, eta: f64) -> Result<f64> {
    let eta = finite(eta, "btl_loss argument")?;
    Ok(logistic_loss(if y { 1.0 } else { 0.0 }, eta))
}

/// Fisher information of one comparison at score difference `eta`.
pub fn fisher_weight(eta: f64) -> Result<f64> {
    finite(eta, "fisher_weight argument").map(logistic_weight)
}

/// Subtracts each row mean.
pub fn recenter_rows(index: Arc<TaskModelIndex>, m: &DMatrix<f64>) -> ScoreMatrix {
    let mut values = m.clone();
    center_rows_in_place(&mut values);
    ScoreMatrix { index, values }
}

pub(crate) fn center_rows_in_place(m: &mut DMatrix<f64>) {
    let d = m.ncols() as f64;
    for mut row in m.row_iter_mut() {
        let mean = row.sum() / d;
        row.add_scalar_mut(-mean);
    }
}

/// `1 + #{ℓ : Θ[t,ℓ] > Θ[t,m]}`.
pub fn true_rank(scores: &ScoreMatrix, task: usize, model: usize) -> Result<usize> {
    let idx = scores.index();
    if task >= idx.task_count() || model >= idx.model_count() {
        return Err(Error::InvalidArgument(format!("cell ({task}, {model}) out of range")));
    }
    let v = scores.get(task, model);
    Ok(1 + scores.values.row(task).iter().filter(|&&x| x > v).count())
}

/// Positions of the `k` largest entries; ties go to the smaller index. Sorted ascending.
pub fn top_k_set(row: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Euclidean projection of each row onto `{x : Σx = 0, |x_i| ≤ bound}`.
///
/// The projection of `y` is `clip(y − μ, −B, B)` with the scalar `μ` chosen so
/// the result sums to zero. `μ` is bracketed by bisection and then solved
/// exactly on the identified active set.
pub fn project_rows_to_box(m: &mut DMatrix<f64>, bound: f64) {
    if !bound.is_finite() {
        center_rows_in_place(m);
        return;
    }
    let mut row = Vec::with_capacity(m.ncols());
    for t in 0..m.nrows() {
        row.clear();
        row.extend(m.row(t).iter().copied());
        project_vec_to_box(&mut row, bound);
        for (j, &x) in row.iter().enumerate() {
            m[(t, j)] = x;
        }
    }
}

fn project_vec_to_box(y: &mut [f64], bound: f64) {
    let clipped_sum = |mu: f64| y.iter().map(|&v| (v - mu).clamp(-bound, bound)).sum::<f64>();
    let (mut lo, mut hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    lo -= bound;
    hi += bound;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if clipped_sum(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut mu = 0.5 * (lo + hi);
    let (mut free_sum, mut free, mut fixed) = (0.0, 0usize, 0.0);
    for &v in y.iter() {
        let x = v - mu;
        if x >= bound {
            fixed += bound;
        } else if x <= -bound {
            fixed -= bound;
        } else {
            free_sum += v;
            free += 1;
        }
    }
    if free > 0 {
        let exact = (free_sum + fixed) / free as f64;
        if exact.is_finite() {
            mu = exact;
        }
    }
    for v in y.iter_mut() {
        *v = (*v - mu).clamp(-bound, bound);
    }
}
