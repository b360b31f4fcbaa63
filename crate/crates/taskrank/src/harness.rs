//! Monte Carlo experiment drivers.
//!
//! Every experiment draws one truth from its base [`SyntheticConfig`] and
//! resamples comparisons per trial, so trial `i` sees the same data no matter
//! how trials are scheduled across threads. Aggregates carry percentile
//! bootstrap intervals over trials.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use taskrank_core::certify::{certify_models, BootstrapConfig, CertificationReport, Decision, Scope};
use taskrank_core::metrics::hamming_topk;
use taskrank_core::rng::{derive_seed, stream_rng};
use taskrank_core::synth::{generate_truth, sample_comparisons, SamplingDesign, SyntheticConfig};
use taskrank_core::tangent::ContrastSpec;
use taskrank_core::{true_rank, ComparisonDataset, ScoreMatrix};

use crate::error::{Error, Result};
use crate::io::write_json;
use crate::pipeline::{Estimator, Method};

/// Resamples used for the percentile intervals over trials.
pub const CI_RESAMPLES: usize = 200;

const SELECT_TAG: u64 = 0x5e_1e_c7;
const BOOT_TAG: u64 = 0xb007;
const CI_TAG: u64 = 0xc1;

/// Per-trial measurements. Fields not produced by an experiment stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: u64,
    pub n: usize,
    pub method: Option<Method>,
    pub frob_error: f64,
    pub inf_error: f64,
    /// K → per-task Hamming error.
    pub hamming_by_task: BTreeMap<usize, Vec<f64>>,
    pub coverage: Vec<bool>,
    pub rank_ci_widths: Vec<usize>,
    pub resolved: Vec<bool>,
    pub correct: Vec<bool>,
    pub runtime_ms: f64,
}

/// A mean with its percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean of `values` and the 2.5% / 97.5% percentiles of `resamples` bootstrap
/// means.
pub fn percentile_ci(values: &[f64], resamples: usize, seed: u64) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate { mean: f64::NAN, lower: f64::NAN, upper: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = stream_rng(derive_seed(seed, CI_TAG), 0);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    if means.is_empty() {
        return Estimate { mean, lower: mean, upper: mean };
    }
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    Estimate { mean, lower: at(0.025), upper: at(0.975) }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn rate(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&f| f).count() as f64 / flags.len().max(1) as f64
}

/// Comparison sample of `trial` from a fixed truth.
pub fn trial_data(base: &SyntheticConfig, truth: &ScoreMatrix, n: usize, trial: u64) -> Result<ComparisonDataset> {
    let design = SamplingDesign::uniform(truth.index());
    Ok(sample_comparisons(truth, &design, n, base.temperature, derive_seed(base.seed, trial))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Truth parameters; `base.n` is ignored in favour of `n_values`.
    pub base: SyntheticConfig,
    pub n_values: Vec<usize>,
    pub ks: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub estimator: Estimator,
}

/// One cell of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub method: Method,
    pub k: usize,
    pub trials: usize,
    pub hamming: Estimate,
    pub frob_error: Estimate,
    pub inf_error: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialMetrics>,
}

/// Estimation accuracy of each method across sample sizes: mean top-K
/// Hamming error per (n, method, K) and mean Frobenius / sup-norm errors.
pub fn run_sim_sweep(config: &SweepConfig) -> Result<SweepResult> {
    if config.trials == 0 || config.n_values.is_empty() || config.methods.is_empty() {
        return Err(Error::Config("sweep needs at least one trial, sample size and method".into()));
    }
    let truth = generate_truth(&SyntheticConfig { n: config.n_values[0], ..config.base.clone() })?;
    let cells: Vec<(usize, u64)> =
        config.n_values.iter().flat_map(|&n| (0..config.trials as u64).map(move |t| (n, t))).collect();
    let per_cell = cells
        .par_iter()
        .map(|&(n, trial)| {
            let data = trial_data(&config.base, &truth, n, trial)?;
            config
                .methods
                .iter()
                .map(|&method| {
                    let start = Instant::now();
                    let est = Estimator { method, ..config.estimator }.fit(&data)?;
                    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
                    let hamming_by_task =
                        config.ks.iter().map(|&k| Ok((k, hamming_topk(&est, &truth, k)?))).collect::<Result<_>>()?;
                    Ok(TrialMetrics {
                        trial,
                        n,
                        method: Some(method),
                        frob_error: est.frobenius_distance(&truth),
                        inf_error: est.max_abs_distance(&truth),
                        hamming_by_task,
                        runtime_ms,
                        ..Default::default()
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let trials: Vec<TrialMetrics> = per_cell.into_iter().flatten().collect();

    let mut rows = Vec::new();
    for &n in &config.n_values {
        for &method in &config.methods {
            let group: Vec<&TrialMetrics> = trials.iter().filter(|m| m.n == n && m.method == Some(method)).collect();
            let frob: Vec<f64> = group.iter().map(|m| m.frob_error).collect();
            let inf: Vec<f64> = group.iter().map(|m| m.inf_error).collect();
            let seed = derive_seed(config.base.seed, n as u64);
            for &k in &config.ks {
                let ham: Vec<f64> = group.iter().map(|m| mean(&m.hamming_by_task[&k])).collect();
                rows.push(SweepRow {
                    n,
                    method,
                    k,
                    trials: group.len(),
                    hamming: percentile_ci(&ham, CI_RESAMPLES, seed ^ k as u64),
                    frob_error: percentile_ci(&frob, CI_RESAMPLES, seed),
                    inf_error: percentile_ci(&inf, CI_RESAMPLES, seed),
                });
            }
        }
    }
    Ok(SweepResult { rows, trials })
}

impl SweepResult {
    pub fn row(&self, n: usize, method: Method, k: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.n == n && r.method == method && r.k == k)
    }

    /// Columns: `n,method,k,trials,hamming_mean,hamming_lower,hamming_upper`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("n,method,k,trials,hamming_mean,hamming_lower,hamming_upper\n");
        for r in &self.rows {
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.n, r.method, r.k, r.trials, r.hamming.mean, r.hamming.lower, r.hamming.upper
            ));
        }
        write_text(path, &text)
    }

    /// Error-decay data, one line per (n, method): `n,method,frob_mean,frob_lower,
    /// frob_upper,inf_mean,inf_lower,inf_upper`.
    pub fn write_plot_data(&self, path: &Path) -> Result<()> {
        let mut text = String::from("n,method,frob_mean,frob_lower,frob_upper,inf_mean,inf_lower,inf_upper\n");
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.rows {
            if seen.insert((r.n, r.method)) {
                let (f, i) = (r.frob_error, r.inf_error);
                text.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.n, r.method, f.mean, f.lower, f.upper, i.mean, i.lower, i.upper
                ));
            }
        }
        write_text(path, &text)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageScope {
    /// One randomly chosen model per task, each task its own family.
    SingleTask,
    /// One randomly chosen model across all tasks in a single family.
    Simultaneous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageConfig {
    pub base: SyntheticConfig,
    pub scopes: Vec<CoverageScope>,
    pub k: usize,
    pub bootstrap: BootstrapConfig,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub estimator: Estimator,
}

/// Coverage, certification and width summary for one (method, scope).
///
/// `coverage` is the share of (trial, task) rank bands containing the true
/// rank. `family_coverage` is the share of trials in which every band of the
/// scope covers at once; for the single-task scope that spans independent
/// families and is not a calibrated quantity. `resolved` is the share of top-K
/// decisions that are not unresolved, `correct` the share that are resolved
/// and right. Widths are `upper − lower + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: Method,
    pub scope: CoverageScope,
    pub trials: usize,
    pub coverage: Estimate,
    pub family_coverage: Estimate,
    pub resolved: Estimate,
    pub correct: Estimate,
    pub width: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub rows: Vec<CoverageRow>,
    pub trials: Vec<(CoverageScope, TrialMetrics)>,
}

impl CoverageResult {
    pub fn row(&self, method: Method, scope: CoverageScope) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.method == method && r.scope == scope)
    }
}

fn band_metrics(report: &CertificationReport, truth: &ScoreMatrix, k: usize) -> Result<TrialMetrics> {
    let mut m = TrialMetrics::default();
    for (band, decision) in report.rank_bands.iter().zip(&report.topk) {
        let rank = true_rank(truth, band.task, band.model)?;
        m.coverage.push(band.contains(rank));
        m.rank_ci_widths.push(band.width());
        let resolved = decision.decision != Decision::Unresolved;
        m.resolved.push(resolved);
        m.correct.push(match decision.decision {
            Decision::CertifiedIn => rank <= k,
            Decision::CertifiedOut => rank > k,
            Decision::Unresolved => false,
        });
    }
    Ok(m)
}

/// Certification targets, fixed across trials: a uniformly drawn model for
/// every task (single-task scope) and one uniformly drawn model for the
/// all-task family.
pub fn coverage_targets(scopes: &[CoverageScope], seed: u64, dt: usize, dm: usize) -> Vec<(Scope, usize)> {
    let mut rng = stream_rng(derive_seed(seed, SELECT_TAG), 0);
    let single: Vec<usize> = (0..dt).map(|_| rng.random_range(0..dm)).collect();
    let joint_model = rng.random_range(0..dm);
    let mut targets = Vec::new();
    for scope in scopes {
        match scope {
            CoverageScope::SingleTask => targets.extend(single.iter().enumerate().map(|(t, &m)| (Scope::OneTask(t), m))),
            CoverageScope::Simultaneous => targets.push((Scope::AllTasks, joint_model)),
        }
    }
    targets
}

/// Rank-band coverage of each method. All scopes of a trial share the same
/// data, fits and bootstrap draws.
pub fn run_coverage_experiment(config: &CoverageConfig) -> Result<CoverageResult> {
    if config.trials == 0 || config.scopes.is_empty() || config.methods.is_empty() {
        return Err(Error::Config("coverage experiment needs trials, scopes and methods".into()));
    }
    let truth = generate_truth(&config.base)?;
    let (dt, dm) = (truth.index().task_count(), truth.index().model_count());
    let targets = coverage_targets(&config.scopes, config.base.seed, dt, dm);
    let per_trial = (0..config.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let data = trial_data(&config.base, &truth, config.base.n, trial)?;
            let boot = BootstrapConfig { seed: derive_seed(config.bootstrap.seed ^ BOOT_TAG, trial), ..config.bootstrap };
            let mut out = Vec::new();
            for &method in &config.methods {
                let start = Instant::now();
                let est = Estimator { method, seed: derive_seed(config.estimator.seed, trial), ..config.estimator };
                let map = est.influence_map(&data)?;
                let reports = certify_models(map.as_ref(), &targets, config.k, &boot)?;
                let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
                let mut reports = reports.iter();
                for &scope in &config.scopes {
                    let mut m = TrialMetrics { trial, n: config.base.n, method: Some(method), runtime_ms, ..Default::default() };
                    let count = if scope == CoverageScope::SingleTask { dt } else { 1 };
                    for report in reports.by_ref().take(count) {
                        let b = band_metrics(report, &truth, config.k)?;
                        m.coverage.extend(b.coverage);
                        m.rank_ci_widths.extend(b.rank_ci_widths);
                        m.resolved.extend(b.resolved);
                        m.correct.extend(b.correct);
                    }
                    out.push((scope, m));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let trials: Vec<(CoverageScope, TrialMetrics)> = per_trial.into_iter().flatten().collect();

    let mut rows = Vec::new();
    for &method in &config.methods {
        for &scope in &config.scopes {
            let group: Vec<&TrialMetrics> =
                trials.iter().filter(|(s, m)| *s == scope && m.method == Some(method)).map(|(_, m)| m).collect();
            let coverage: Vec<f64> = group.iter().map(|m| rate(&m.coverage)).collect();
            let family: Vec<f64> = group.iter().map(|m| f64::from(u8::from(m.coverage.iter().all(|&c| c)))).collect();
            let resolved: Vec<f64> = group.iter().map(|m| rate(&m.resolved)).collect();
            let correct: Vec<f64> = group.iter().map(|m| rate(&m.correct)).collect();
            let width: Vec<f64> =
                group.iter().map(|m| m.rank_ci_widths.iter().sum::<usize>() as f64 / m.rank_ci_widths.len() as f64).collect();
            let seed = derive_seed(config.base.seed, method as u64 * 2 + scope as u64);
            rows.push(CoverageRow {
                method,
                scope,
                trials: group.len(),
                coverage: percentile_ci(&coverage, CI_RESAMPLES, seed),
                family_coverage: percentile_ci(&family, CI_RESAMPLES, seed),
                resolved: percentile_ci(&resolved, CI_RESAMPLES, seed),
                correct: percentile_ci(&correct, CI_RESAMPLES, seed),
                width: percentile_ci(&width, CI_RESAMPLES, seed),
            });
        }
    }
    Ok(CoverageResult { rows, trials })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalityConfig {
    pub base: SyntheticConfig,
    /// Exactly two contrasts.
    pub contrasts: Vec<ContrastSpec>,
    pub trials: usize,
    pub alpha: f64,
    pub estimator: Estimator,
}

/// Joint behaviour of two one-step estimates across trials. Covariances are
/// on the `sqrt(n)` scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityResult {
    pub trials: usize,
    pub truth: [f64; 2],
    pub estimates: Vec<[f64; 2]>,
    /// Share of trials whose `1 − α` plug-in ellipse contains the truth.
    pub ellipse_coverage: f64,
    pub empirical_covariance: [[f64; 2]; 2],
    pub mean_plugin_covariance: [[f64; 2]; 2],
    pub empirical_correlation: f64,
    pub mean_plugin_correlation: f64,
}

impl NormalityResult {
    /// Largest entrywise `|plug-in − empirical| / |empirical|`.
    pub fn max_relative_covariance_gap(&self) -> f64 {
        let (e, p) = (self.empirical_covariance, self.mean_plugin_covariance);
        [(0, 0), (0, 1), (1, 1)].iter().map(|&(i, j)| (p[i][j] - e[i][j]).abs() / e[i][j].abs()).fold(0.0, f64::max)
    }
}

pub fn run_normality_experiment(config: &NormalityConfig) -> Result<NormalityResult> {
    if config.contrasts.len() != 2 {
        return Err(Error::Config("the normality experiment takes exactly two contrasts".into()));
    }
    if config.trials < 2 {
        return Err(Error::Config("the normality experiment needs at least two trials".into()));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::Config(format!("alpha {} not in (0, 1)", config.alpha)));
    }
    let truth = generate_truth(&config.base)?;
    let target = [config.contrasts[0].dot(truth.values()), config.contrasts[1].dot(truth.values())];
    let n = config.base.n as f64;
    let radius = ChiSquared::new(2.0).map_err(|e| Error::Numerical(e.to_string()))?.inverse_cdf(1.0 - config.alpha);
    let per_trial = (0..config.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let data = trial_data(&config.base, &truth, config.base.n, trial)?;
            let est = Estimator { seed: derive_seed(config.estimator.seed, trial), ..config.estimator };
            let map = est.influence_map(&data)?;
            let a = map.infer(&config.contrasts[0])?;
            let b = map.infer(&config.contrasts[1])?;
            let cov = map.covariance(&config.contrasts)?;
            let d = [a.estimate - target[0], b.estimate - target[1]];
            let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
            if !(det > 0.0) {
                return Err(Error::Numerical(format!("singular plug-in covariance in trial {trial}")));
            }
            let q = n * (cov[(1, 1)] * d[0] * d[0] - 2.0 * cov[(0, 1)] * d[0] * d[1] + cov[(0, 0)] * d[1] * d[1]) / det;
            Ok(([a.estimate, b.estimate], [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]], q <= radius))
        })
        .collect::<Result<Vec<_>>>()?;

    let t = per_trial.len() as f64;
    let estimates: Vec<[f64; 2]> = per_trial.iter().map(|p| p.0).collect();
    let mu = [estimates.iter().map(|e| e[0]).sum::<f64>() / t, estimates.iter().map(|e| e[1]).sum::<f64>() / t];
    let mut emp = [[0.0; 2]; 2];
    let mut plug = [[0.0; 2]; 2];
    for (e, c, _) in &per_trial {
        for i in 0..2 {
            for j in 0..2 {
                emp[i][j] += n * (e[i] - mu[i]) * (e[j] - mu[j]) / (t - 1.0);
                plug[i][j] += c[i][j] / t;
            }
        }
    }
    let corr = |m: [[f64; 2]; 2]| m[0][1] / (m[0][0] * m[1][1]).sqrt();
    let plugin_corr = per_trial.iter().map(|(_, c, _)| corr(*c)).sum::<f64>() / t;
    Ok(NormalityResult {
        trials: per_trial.len(),
        truth: target,
        ellipse_coverage: per_trial.iter().filter(|p| p.2).count() as f64 / t,
        estimates,
        empirical_covariance: emp,
        mean_plugin_covariance: plug,
        empirical_correlation: corr(emp),
        mean_plugin_correlation: plugin_corr,
    })
}

/// Writes any experiment summary as versioned JSON.
pub fn write_summary<T: Serialize>(path: &Path, experiment: &str, result: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Summary<'a, T> {
        schema_version: u32,
        experiment: &'a str,
        result: &'a T,
    }
    write_json(path, &Summary { schema_version: crate::io::SCHEMA_VERSION, experiment, result })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interval_brackets_the_mean() {
        let values: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let e = percentile_ci(&values, 200, 3);
        assert!(e.lower <= e.mean && e.mean <= e.upper);
        let constant = percentile_ci(&[2.0; 10], 200, 3);
        assert_eq!((constant.lower, constant.upper), (2.0, 2.0));
    }
}
