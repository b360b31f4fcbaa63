use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use super::solve::weighted_laplacians;
use super::{CgOptions, ContrastSpec, FisherOperator, GapEstimate, GapInference, InfluenceMap, TangentBasis, TangentSystem};
use crate::model::sigmoid;
use crate::rng::{stream_rng, streams};
use crate::split::FoldAssignment;
use crate::{ComparisonDataset, ComparisonRecord, Error, Result, ScoreMatrix, TaskModelIndex};

/// One evaluation/auxiliary pair of record positions. Nuisances are fit on
/// `aux` and the correction is averaged over `eval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub eval: Vec<usize>,
    pub aux: Vec<usize>,
}

impl SplitPlan {
    /// One plan per fold: evaluate on the fold, fit on its complement.
    pub fn cross_fit(folds: &FoldAssignment) -> Vec<SplitPlan> {
        (0..folds.fold_count())
            .map(|k| SplitPlan { eval: folds.fold(k), aux: folds.complement(k) })
            .collect()
    }

    /// A single random split with `aux_fraction` of the records in the
    /// auxiliary part.
    pub fn sample_split(n: usize, aux_fraction: f64, seed: u64) -> Result<Vec<SplitPlan>> {
        if !(aux_fraction > 0.0 && aux_fraction < 1.0) {
            return Err(Error::InvalidArgument("aux fraction must lie in (0, 1)".into()));
        }
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(seed, streams::SPLITS));
        let cut = Float::round(aux_fraction * n as f64) as usize;
        let mut aux = order[..cut].to_vec();
        let mut eval = order[cut..].to_vec();
        aux.sort_unstable();
        eval.sort_unstable();
        if aux.is_empty() || eval.is_empty() {
            return Err(Error::Empty("sample split"));
        }
        Ok(alloc::vec![SplitPlan { eval, aux }])
    }
}

/// Options shared by every fold of a cross-fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossFitOptions {
    pub rank: usize,
    pub cg: CgOptions,
}

#[derive(Debug, Clone)]
struct Fold {
    eval: Vec<usize>,
    theta: ScoreMatrix,
    system: TangentSystem,
    residuals: Vec<f64>,
    /// `M⁻¹ S M⁻¹` with `S = Σ_{eval} s_i² x_i x_iᵀ` in tangent coordinates.
    moment: DMatrix<f64>,
    /// `M⁻¹ Σ_{eval} s_i x_i`.
    correction: DVector<f64>,
}

impl Fold {
    fn z_matrix(&self, records: &[ComparisonRecord], weight: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let (dt, dm) = (self.theta.values().nrows(), self.theta.values().ncols());
        let mut z = DMatrix::zeros(dt, dm);
        for (pos, (&i, &s)) in self.eval.iter().zip(&self.residuals).enumerate() {
            let r = &records[i];
            let c = weight(pos) * s;
            z[(r.task, r.model_a)] += c;
            z[(r.task, r.model_b)] -= c;
        }
        z
    }
}

/// Cross-fitted one-step estimator for linear contrasts of the score matrix.
#[derive(Debug, Clone)]
pub struct CrossFit {
    index: Arc<TaskModelIndex>,
    records: Vec<ComparisonRecord>,
    folds: Vec<Fold>,
    /// `(fold, position within fold)` for every evaluated record, in dataset order.
    observations: Vec<(usize, usize)>,
}

impl CrossFit {
    /// Fits the nuisance on each plan's auxiliary records with `fit_fn`.
    pub fn new<F>(dataset: &ComparisonDataset, plans: &[SplitPlan], options: &CrossFitOptions, mut fit_fn: F) -> Result<Self>
    where
        F: FnMut(&ComparisonDataset) -> Result<ScoreMatrix>,
    {
        validate_plans(dataset.len(), plans)?;
        let fits = plans
            .iter()
            .map(|p| fit_fn(&dataset.select(&p.aux)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_fits(dataset, plans, fits, options)
    }

    /// Builds the estimator from nuisance fits computed elsewhere (one per plan,
    /// each fit on that plan's auxiliary records).
    pub fn from_fits(
        dataset: &ComparisonDataset,
        plans: &[SplitPlan],
        fits: Vec<ScoreMatrix>,
        options: &CrossFitOptions,
    ) -> Result<Self> {
        validate_plans(dataset.len(), plans)?;
        if fits.len() != plans.len() {
            return Err(Error::DimensionMismatch("one fit per split plan is required".into()));
        }
        let index = Arc::clone(dataset.index());
        let (dt, dm) = (index.task_count(), index.model_count());
        let records = dataset.records().to_vec();
        let mut folds = Vec::with_capacity(plans.len());
        for (plan, theta) in plans.iter().zip(fits) {
            let aux: Vec<ComparisonRecord> = plan.aux.iter().map(|&i| records[i]).collect();
            let basis = TangentBasis::from_scores(&theta, options.rank)?;
            let fisher = FisherOperator::new(&aux, &theta)?;
            let system = TangentSystem::new(basis, &fisher, &options.cg)?;
            let eval: Vec<ComparisonRecord> = plan.eval.iter().map(|&i| records[i]).collect();
            let residuals: Vec<f64> = eval.iter().map(|r| r.y() - sigmoid(r.eta(theta.values()))).collect();
            let sq: Vec<f64> = residuals.iter().map(|s| s * s).collect();
            let s = system.assemble(&weighted_laplacians(&eval, &sq, dt, dm));
            let moment = system.inverse() * s * system.inverse();
            let mut fold = Fold {
                eval: plan.eval.clone(),
                theta,
                system,
                residuals,
                moment,
                correction: DVector::zeros(0),
            };
            let z = fold.z_matrix(&records, |_| 1.0);
            fold.correction = fold.system.inverse() * fold.system.coords(&z);
            folds.push(fold);
        }
        let mut owner = alloc::vec![None; records.len()];
        for (k, f) in folds.iter().enumerate() {
            for (pos, &i) in f.eval.iter().enumerate() {
                owner[i] = Some((k, pos));
            }
        }
        let observations = owner.into_iter().flatten().collect();
        Ok(Self { index, records, folds, observations })
    }

    pub fn fold_count(&self) -> usize {
        self.folds.len()
    }

    /// Nuisance fit of fold `k`.
    pub fn fold_fit(&self, k: usize) -> &ScoreMatrix {
        &self.folds[k].theta
    }

    /// Tangent system of fold `k`.
    pub fn fold_system(&self, k: usize) -> &TangentSystem {
        &self.folds[k].system
    }

    /// Efficient direction of fold `k` for `contrast`.
    pub fn direction(&self, k: usize, contrast: &ContrastSpec) -> DMatrix<f64> {
        self.folds[k].system.direction(contrast)
    }

    fn n(&self) -> f64 {
        self.observations.len() as f64
    }
}

fn validate_plans(n: usize, plans: &[SplitPlan]) -> Result<()> {
    if plans.is_empty() {
        return Err(Error::Empty("split plans"));
    }
    let mut seen = alloc::vec![false; n];
    for (k, p) in plans.iter().enumerate() {
        if p.eval.is_empty() || p.aux.is_empty() {
            return Err(Error::InvalidArgument(format!("plan {k} has an empty part")));
        }
        for &i in p.eval.iter().chain(&p.aux) {
            if i >= n {
                return Err(Error::InvalidArgument(format!("plan {k} references record {i}")));
            }
        }
        for &i in &p.eval {
            if seen[i] {
                return Err(Error::InvalidArgument(format!("record {i} is evaluated twice")));
            }
            seen[i] = true;
        }
    }
    Ok(())
}

impl InfluenceMap for CrossFit {
    fn index(&self) -> &TaskModelIndex {
        &self.index
    }

    fn sample_size(&self) -> usize {
        self.observations.len()
    }

    fn plug_in(&self, contrast: &ContrastSpec) -> Result<f64> {
        contrast.validate(&self.index)?;
        let n = self.n();
        Ok(self
            .folds
            .iter()
            .map(|f| f.eval.len() as f64 / n * contrast.dot(f.theta.values()))
            .sum())
    }

    fn influence(&self, contrast: &ContrastSpec) -> Result<Vec<f64>> {
        contrast.validate(&self.index)?;
        let directions: Vec<DMatrix<f64>> = self.folds.iter().map(|f| f.system.direction(contrast)).collect();
        Ok(self
            .observations
            .iter()
            .map(|&(k, pos)| {
                let f = &self.folds[k];
                let r = &self.records[f.eval[pos]];
                f.residuals[pos] * (directions[k][(r.task, r.model_a)] - directions[k][(r.task, r.model_b)])
            })
            .collect())
    }

    fn weighted_sum(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut fold_weights: Vec<Vec<f64>> = self.folds.iter().map(|f| alloc::vec![0.0; f.eval.len()]).collect();
        for (obs, &(k, pos)) in self.observations.iter().enumerate() {
            fold_weights[k][pos] = weights[obs];
        }
        let (dt, dm) = (self.index.task_count(), self.index.model_count());
        let mut y = DMatrix::zeros(dt, dm);
        for (f, w) in self.folds.iter().zip(&fold_weights) {
            let z = f.z_matrix(&self.records, |pos| w[pos]);
            let h = f.system.inverse() * f.system.coords(&z);
            y += f.system.embed(&h);
        }
        y
    }

    /// Uses the tangent-coordinate second moments instead of materializing
    /// influence vectors: `σ̂² = n⁻¹ Σ_k g_kᵀ M_k⁻¹ S_k M_k⁻¹ g_k`. Score gaps
    /// are grouped by task so each task's cell moments are formed once.
    fn summarize(&self, contrasts: &[ContrastSpec]) -> Vec<Result<GapEstimate>> {
        let n = self.n();
        let mut per_task: Vec<Option<(DMatrix<f64>, DVector<f64>)>> = alloc::vec![None; self.index.task_count()];
        contrasts
            .iter()
            .map(|c| {
                let plug = self.plug_in(c)?;
                let (second, mean) = match c.as_gap() {
                    Some((t, a, b)) => {
                        let (g, m) = per_task[t].get_or_insert_with(|| self.task_moments(t));
                        (g[(a, a)] - 2.0 * g[(a, b)] + g[(b, b)], m[a] - m[b])
                    }
                    None => self.folds.iter().fold((0.0, 0.0), |(s, m), f| {
                        let g = f.system.contrast_coords(c);
                        (s + g.dot(&(&f.moment * &g)), m + g.dot(&f.correction))
                    }),
                };
                Ok(GapEstimate {
                    estimate: plug + mean / n,
                    std_error: Float::sqrt(second.max(0.0) / n / n),
                })
            })
            .collect()
    }
}

impl CrossFit {
    /// Cell second moments and cell corrections of task `t`, summed over folds.
    fn task_moments(&self, task: usize) -> (DMatrix<f64>, DVector<f64>) {
        let dm = self.index.model_count();
        let mut g = DMatrix::zeros(dm, dm);
        let mut m = DVector::zeros(dm);
        for f in &self.folds {
            g += f.system.task_cell_form(task, &f.moment);
            m += f.system.task_cell_vector(task, &f.correction);
        }
        (g, m)
    }
}

/// Cross-fitted estimates for a contrast family together with
/// `Σ̂_jk = n⁻¹ Σ_i φ_j(W_i) φ_k(W_i)`.
#[derive(Debug, Clone)]
pub struct OneStepResult {
    pub estimates: Vec<GapInference>,
    pub covariance: DMatrix<f64>,
}

/// Fits the nuisances on each fold complement with `fit_fn` and returns the
/// one-step estimates, standard errors, influence values and plug-in
/// covariance for `contrasts`.
pub fn one_step_estimate<F>(
    contrasts: &[ContrastSpec],
    dataset: &ComparisonDataset,
    folds: &FoldAssignment,
    options: &CrossFitOptions,
    fit_fn: F,
) -> Result<OneStepResult>
where
    F: FnMut(&ComparisonDataset) -> Result<ScoreMatrix>,
{
    if contrasts.is_empty() {
        return Err(Error::Empty("contrast family"));
    }
    if folds.n() != dataset.len() {
        return Err(Error::DimensionMismatch("fold assignment and dataset sizes differ".into()));
    }
    let fit = CrossFit::new(dataset, &SplitPlan::cross_fit(folds), options, fit_fn)?;
    let estimates = contrasts.iter().map(|c| fit.infer(c)).collect::<Result<Vec<_>>>()?;
    let n = fit.n();
    let p = estimates.len();
    let covariance = DMatrix::from_fn(p, p, |j, k| {
        estimates[j].influence.iter().zip(&estimates[k].influence).map(|(a, b)| a * b).sum::<f64>() / n
    });
    Ok(OneStepResult { estimates, covariance })
}
