//! Synthetic low-rank truths and comparison samples.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{center_rows_in_place, sigmoid};
use crate::rng::{derive_seed, stream_rng, streams};
use crate::{ComparisonDataset, ComparisonRecord, Error, Result, ScoreMatrix, TaskModelIndex};

/// Parameters of a synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SyntheticConfig {
    pub task_count: usize,
    pub model_count: usize,
    pub rank: usize,
    /// Target value of `max |Θ[t,m]|`.
    pub amplitude: f64,
    pub n: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            task_count: 50,
            model_count: 50,
            rank: 5,
            amplitude: 5.0,
            n: 16_000,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        TaskModelIndex::anonymous(self.task_count, self.model_count)?;
        if self.rank == 0 || self.rank > self.task_count.min(self.model_count) {
            return Err(Error::InvalidArgument(format!(
                "rank {} must lie in [1, {}]",
                self.rank,
                self.task_count.min(self.model_count)
            )));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument("amplitude must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-task distribution over unordered model pairs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PairWeights {
    Uniform,
    /// One probability vector per task over the pairs `(a, b)`, `a < b`, in
    /// lexicographic order (see [`pair_at`]).
    Custom(Vec<Vec<f64>>),
}

/// Task distribution `ν` and pair distributions `π_t`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplingDesign {
    pub task_weights: Vec<f64>,
    pub pair_weights: PairWeights,
}

/// Realized design constants: `ν_t·d_t ∈ [c_ν, C_ν]` and `π_t(pair)·P ∈ [c_π, C_π]`
/// with `P = d_m(d_m−1)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignConstants {
    pub task_lower: f64,
    pub task_upper: f64,
    pub pair_lower: f64,
    pub pair_upper: f64,
}

/// Number of unordered pairs among `d` models.
pub fn pair_count(d: usize) -> usize {
    d * (d - 1) / 2
}

/// The `k`-th unordered pair `(a, b)`, `a < b`, in lexicographic order.
pub fn pair_at(d: usize, mut k: usize) -> (usize, usize) {
    let mut a = 0;
    while k >= d - 1 - a {
        k -= d - 1 - a;
        a += 1;
    }
    (a, a + 1 + k)
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument(format!("{what} must have positive finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn draw(cum: &[f64], u: f64) -> usize {
    let target = u * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= target).min(cum.len() - 1)
}

impl SamplingDesign {
    /// Uniform tasks and uniform pairs.
    pub fn uniform(index: &TaskModelIndex) -> Self {
        let dt = index.task_count();
        Self {
            task_weights: alloc::vec![1.0 / dt as f64; dt],
            pair_weights: PairWeights::Uniform,
        }
    }

    pub fn validate(&self, index: &TaskModelIndex) -> Result<()> {
        if self.task_weights.len() != index.task_count() {
            return Err(Error::DimensionMismatch("task weights length differs from task count".into()));
        }
        check_distribution(&self.task_weights, "task weights")?;
        if let PairWeights::Custom(per_task) = &self.pair_weights {
            if per_task.len() != index.task_count() {
                return Err(Error::DimensionMismatch("one pair distribution per task is required".into()));
            }
            let p = pair_count(index.model_count());
            for (t, w) in per_task.iter().enumerate() {
                if w.len() != p {
                    return Err(Error::DimensionMismatch(format!("task {t} pair weights need {p} entries")));
                }
                check_distribution(w, "pair weights")?;
            }
        }
        Ok(())
    }

    pub fn constants(&self, index: &TaskModelIndex) -> DesignConstants {
        let dt = index.task_count() as f64;
        let scaled = self.task_weights.iter().map(|w| w * dt);
        let (task_lower, task_upper) = min_max(scaled);
        let (pair_lower, pair_upper) = match &self.pair_weights {
            PairWeights::Uniform => (1.0, 1.0),
            PairWeights::Custom(per_task) => {
                let p = pair_count(index.model_count()) as f64;
                min_max(per_task.iter().flatten().map(|w| w * p))
            }
        };
        DesignConstants { task_lower, task_upper, pair_lower, pair_upper }
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// Random rank-`r` truth: Gaussian factors, product, row-centering, then a
/// rescale so the largest absolute entry equals the amplitude.
pub fn generate_truth(config: &SyntheticConfig) -> Result<ScoreMatrix> {
    config.validate()?;
    let index = Arc::new(TaskModelIndex::anonymous(config.task_count, config.model_count)?);
    for attempt in 0..4u64 {
        let mut rng = stream_rng(config.seed.wrapping_add(attempt), streams::TRUTH);
        let left = DMatrix::<f64>::from_fn(config.task_count, config.rank, |_, _| rng.sample(StandardNormal));
        let right = DMatrix::<f64>::from_fn(config.model_count, config.rank, |_, _| rng.sample(StandardNormal));
        let mut theta = left * right.transpose();
        center_rows_in_place(&mut theta);
        let peak = theta.amax();
        if peak > 0.0 && peak.is_finite() {
            theta *= config.amplitude / peak;
            return ScoreMatrix::new(index, theta);
        }
    }
    Err(Error::InvalidArgument("truth draw degenerated to zero four times".into()))
}

/// `n` independent comparisons from the BTL model at the given temperature.
pub fn sample_comparisons(
    truth: &ScoreMatrix,
    design: &SamplingDesign,
    n: usize,
    temperature: f64,
    seed: u64,
) -> Result<ComparisonDataset> {
    let index = truth.index();
    design.validate(index)?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let dm = index.model_count();
    let task_cum = cumulative(&design.task_weights);
    let pair_cum: Option<Vec<Vec<f64>>> = match &design.pair_weights {
        PairWeights::Uniform => None,
        PairWeights::Custom(per_task) => Some(per_task.iter().map(|w| cumulative(w)).collect()),
    };
    let mut rng = stream_rng(seed, streams::SAMPLE);
    let theta = truth.values();
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let task = draw(&task_cum, rng.random::<f64>());
        let (lo, hi) = match &pair_cum {
            None => {
                let a = rng.random_range(0..dm);
                let mut b = rng.random_range(0..dm - 1);
                if b >= a {
                    b += 1;
                }
                (a.min(b), a.max(b))
            }
            Some(cum) => pair_at(dm, draw(&cum[task], rng.random::<f64>())),
        };
        let (a, b) = if rng.random::<bool>() { (lo, hi) } else { (hi, lo) };
        let p = sigmoid((theta[(task, a)] - theta[(task, b)]) / temperature);
        let outcome = rng.random::<f64>() < p;
        records.push(ComparisonRecord { task, model_a: a, model_b: b, outcome });
    }
    ComparisonDataset::new(Arc::clone(index), records)
}

/// Truth and data for one Monte Carlo trial. The truth uses `config.seed`;
/// the sample seed is derived from it and `trial`.
pub fn simulate(config: &SyntheticConfig, trial: u64) -> Result<(ScoreMatrix, ComparisonDataset)> {
    let truth = generate_truth(config)?;
    let design = SamplingDesign::uniform(truth.index());
    let data = sample_comparisons(&truth, &design, config.n, config.temperature, derive_seed(config.seed, trial))?;
    Ok((truth, data))
}
