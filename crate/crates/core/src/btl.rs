//! Independent per-task Bradley–Terry fits and their Wald influence functions.
//!
//! Each task is fit on its own comparisons by damped Newton iterations on the
//! ridged log-likelihood. Models that never appear in a task get score zero.
//! [`WaldInference`] turns a fit into per-observation influence values with the
//! usual MLE sandwich, so the baseline can be certified with the same bootstrap
//! as the joint estimator.

use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::linalg::spd_solve;
use crate::model::{logistic_loss, logistic_weight, sigmoid};
use crate::tangent::{ContrastSpec, GapInference, InfluenceMap};
use crate::{ComparisonDataset, ComparisonRecord, Error, Result, ScoreMatrix, TaskModelIndex};

/// Newton settings for the per-task fit.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BtlOptions {
    /// Ridge strength; `None` uses `1e-6` times the task's comparison count.
    pub ridge: Option<f64>,
    pub max_iter: usize,
    /// Convergence threshold on the gradient's sup-norm.
    pub tol: f64,
}

impl Default for BtlOptions {
    fn default() -> Self {
        Self { ridge: None, max_iter: 100, tol: 1e-8 }
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerTaskFit {
    pub scores: ScoreMatrix,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
}

/// Comparisons of one task in local model coordinates.
struct TaskData {
    models: Vec<usize>,
    local: Vec<Option<usize>>,
    pairs: Vec<(usize, usize, f64)>,
}

impl TaskData {
    fn collect(records: &[ComparisonRecord], task: usize, model_count: usize) -> Self {
        let mut seen = alloc::vec![false; model_count];
        for r in records.iter().filter(|r| r.task == task) {
            seen[r.model_a] = true;
            seen[r.model_b] = true;
        }
        let models: Vec<usize> = (0..model_count).filter(|&m| seen[m]).collect();
        let mut local = alloc::vec![None; model_count];
        for (i, &m) in models.iter().enumerate() {
            local[m] = Some(i);
        }
        let pairs = records
            .iter()
            .filter(|r| r.task == task)
            .map(|r| (local[r.model_a].unwrap(), local[r.model_b].unwrap(), r.y()))
            .collect();
        Self { models, local, pairs }
    }

    fn objective(&self, theta: &DVector<f64>, ridge: f64) -> f64 {
        let nll: f64 = self.pairs.iter().map(|&(a, b, y)| logistic_loss(y, theta[a] - theta[b])).sum();
        nll + 0.5 * ridge * theta.norm_squared()
    }

    fn gradient(&self, theta: &DVector<f64>, ridge: f64) -> DVector<f64> {
        let mut g = theta * ridge;
        for &(a, b, y) in &self.pairs {
            let c = sigmoid(theta[a] - theta[b]) - y;
            g[a] += c;
            g[b] -= c;
        }
        g
    }

    /// `Σ I(η) (e_a − e_b)(e_a − e_b)ᵀ`.
    fn information(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let k = self.models.len();
        let mut h = DMatrix::zeros(k, k);
        for &(a, b, _) in &self.pairs {
            let w = logistic_weight(theta[a] - theta[b]);
            h[(a, a)] += w;
            h[(b, b)] += w;
            h[(a, b)] -= w;
            h[(b, a)] -= w;
        }
        h
    }

    fn connected(&self) -> bool {
        let k = self.models.len();
        let mut parent: Vec<usize> = (0..k).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(a, b, _) in &self.pairs {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
        let root = find(&mut parent, 0);
        (0..k).all(|i| find(&mut parent, i) == root)
    }
}

/// Damped Newton fit for one task. Returns `(scores over observed models, converged, iterations)`.
fn fit_task(data: &TaskData, options: &BtlOptions) -> (DVector<f64>, bool, usize) {
    let k = data.models.len();
    let mut theta = DVector::zeros(k);
    if data.pairs.is_empty() {
        return (theta, true, 0);
    }
    let ridge = options.ridge.unwrap_or(1e-6 * data.pairs.len() as f64);
    let ones = DMatrix::from_element(k, k, 1.0 / k as f64);
    let mut f = data.objective(&theta, ridge);
    for iter in 0..options.max_iter {
        let g = data.gradient(&theta, ridge);
        if g.amax() < options.tol {
            return (theta, true, iter);
        }
        let mut h = data.information(&theta) + &ones;
        for i in 0..k {
            h[(i, i)] += ridge;
        }
        let step = spd_solve(h, &(-&g)).unwrap_or_else(|| -&g);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            let cand = &theta + &step * scale;
            let fc = data.objective(&cand, ridge);
            if fc <= f {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            let done = data.gradient(&theta, ridge).amax() < options.tol;
            return (theta, done, iter + 1);
        }
    }
    let done = data.gradient(&theta, ridge).amax() < options.tol;
    (theta, done, options.max_iter)
}

/// Fits every task independently.
pub fn fit(dataset: &ComparisonDataset, options: &BtlOptions) -> Result<PerTaskFit> {
    if dataset.is_empty() {
        return Err(Error::Empty("per-task fit"));
    }
    let index = dataset.index();
    let (dt, dm) = (index.task_count(), index.model_count());
    let mut values = DMatrix::zeros(dt, dm);
    let mut converged = Vec::with_capacity(dt);
    let mut iterations = Vec::with_capacity(dt);
    for t in 0..dt {
        let data = TaskData::collect(dataset.records(), t, dm);
        let (theta, ok, it) = fit_task(&data, options);
        let mean = if theta.is_empty() { 0.0 } else { theta.sum() / theta.len() as f64 };
        for (i, &m) in data.models.iter().enumerate() {
            values[(t, m)] = theta[i] - mean;
        }
        converged.push(ok);
        iterations.push(it);
    }
    crate::model::center_rows_in_place(&mut values);
    Ok(PerTaskFit { scores: ScoreMatrix::new(Arc::clone(index), values)?, converged, iterations })
}

struct TaskWald {
    local: Vec<Option<usize>>,
    /// Pseudo-inverse of `J_t = n⁻¹ Σ_{i∈t} I(η̂_i) x_i x_iᵀ` in local coordinates.
    jpinv: DMatrix<f64>,
}

/// Wald influence functions of a per-task fit.
pub struct WaldInference {
    index: Arc<TaskModelIndex>,
    scores: ScoreMatrix,
    records: Vec<ComparisonRecord>,
    residuals: Vec<f64>,
    tasks: Vec<Option<TaskWald>>,
}

impl WaldInference {
    /// Evaluates the sandwich at `fit.scores` on `dataset`. Tasks whose
    /// comparison graph is disconnected are marked unavailable.
    pub fn new(dataset: &ComparisonDataset, fit: &PerTaskFit) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Empty("Wald inference"));
        }
        let index = Arc::clone(dataset.index());
        let (dt, dm) = (index.task_count(), index.model_count());
        let n = dataset.len() as f64;
        let th = fit.scores.values();
        let records = dataset.records().to_vec();
        let residuals = records.iter().map(|r| r.y() - sigmoid(r.eta(th))).collect();
        let mut tasks = Vec::with_capacity(dt);
        for t in 0..dt {
            let data = TaskData::collect(&records, t, dm);
            let k = data.models.len();
            if k < 2 || !data.connected() {
                tasks.push(None);
                continue;
            }
            let local_theta = DVector::from_iterator(k, data.models.iter().map(|&m| th[(t, m)]));
            let ones = DMatrix::from_element(k, k, 1.0 / k as f64);
            let j = data.information(&local_theta) / n;
            let inv = nalgebra::linalg::Cholesky::new(j + &ones).map(|c| c.inverse());
            tasks.push(inv.map(|inv| TaskWald { local: data.local, jpinv: inv - ones }));
        }
        Ok(Self { index, scores: fit.scores.clone(), records, residuals, tasks })
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn task_available(&self, task: usize) -> bool {
        self.tasks.get(task).is_some_and(|t| t.is_some())
    }

    /// Estimate, standard error and influence values of `Θ[t,a] − Θ[t,b]`.
    pub fn gap(&self, task: usize, a: usize, b: usize) -> Result<GapInference> {
        self.infer(&ContrastSpec::gap(task, a, b))
    }

    /// Local weight vector `γ_t` for every task the contrast touches.
    fn local_contrasts(&self, contrast: &ContrastSpec) -> Result<Vec<(usize, &TaskWald, DVector<f64>)>> {
        contrast.validate(&self.index)?;
        let mut out = Vec::new();
        for t in contrast.tasks() {
            let tw = self.tasks[t].as_ref().ok_or(Error::InsufficientConnectivity { task: t })?;
            let mut gamma = DVector::zeros(tw.jpinv.nrows());
            for &(u, m, w) in contrast.entries() {
                if u == t {
                    let i = tw.local[m].ok_or(Error::InsufficientConnectivity { task: t })?;
                    gamma[i] += w;
                }
            }
            out.push((t, tw, gamma));
        }
        Ok(out)
    }
}

impl InfluenceMap for WaldInference {
    fn index(&self) -> &TaskModelIndex {
        &self.index
    }

    fn sample_size(&self) -> usize {
        self.records.len()
    }

    fn plug_in(&self, contrast: &ContrastSpec) -> Result<f64> {
        contrast.validate(&self.index)?;
        Ok(contrast.dot(self.scores.values()))
    }

    fn debiased(&self) -> bool {
        false
    }

    fn influence(&self, contrast: &ContrastSpec) -> Result<Vec<f64>> {
        let parts = self.local_contrasts(contrast)?;
        let mut h: Vec<Option<(&TaskWald, DVector<f64>)>> = (0..self.index.task_count()).map(|_| None).collect();
        for (t, tw, gamma) in parts {
            h[t] = Some((tw, &tw.jpinv * gamma));
        }
        Ok(self
            .records
            .iter()
            .zip(&self.residuals)
            .map(|(r, &s)| match &h[r.task] {
                Some((tw, ht)) => {
                    let (a, b) = (tw.local[r.model_a].unwrap(), tw.local[r.model_b].unwrap());
                    s * (ht[a] - ht[b])
                }
                None => 0.0,
            })
            .collect())
    }

    fn weighted_sum(&self, weights: &[f64]) -> DMatrix<f64> {
        let (dt, dm) = (self.index.task_count(), self.index.model_count());
        let mut acc: Vec<Option<DVector<f64>>> = self
            .tasks
            .iter()
            .map(|t| t.as_ref().map(|tw| DVector::zeros(tw.jpinv.nrows())))
            .collect();
        for ((r, &s), &w) in self.records.iter().zip(&self.residuals).zip(weights) {
            if let (Some(v), Some(tw)) = (acc[r.task].as_mut(), self.tasks[r.task].as_ref()) {
                let c = w * s;
                v[tw.local[r.model_a].unwrap()] += c;
                v[tw.local[r.model_b].unwrap()] -= c;
            }
        }
        let mut y = DMatrix::zeros(dt, dm);
        for (t, (v, tw)) in acc.iter().zip(&self.tasks).enumerate() {
            if let (Some(v), Some(tw)) = (v, tw) {
                let h = &tw.jpinv * v;
                for (m, l) in tw.local.iter().enumerate() {
                    if let Some(i) = l {
                        y[(t, m)] = h[*i];
                    }
                }
            }
        }
        y
    }
}

/// Convenience wrapper: Wald inference for one score gap of a per-task fit.
pub fn wald_gap_inference(fit: &PerTaskFit, dataset: &ComparisonDataset, task: usize, a: usize, b: usize) -> Result<GapInference> {
    WaldInference::new(dataset, fit)?.gap(task, a, b)
}
