//! Multiplier-bootstrap calibration, rank bands and top-K certificates.
//!
//! For a family of contrasts with influence values `φ_j(W_i)` and scales
//! `σ̂_j`, the bootstrap statistic of one replicate is
//! `max_j |n^{-1/2} Σ_i ξ_i φ_j(W_i) / σ̂_j|` with i.i.d. standard normal `ξ`.
//! Its empirical `(1 − α)` quantile (order statistic `⌈(1 − α)·draws⌉`) is the
//! shared critical value of the family.
//!
//! Replicate `b` draws `ξ` from stream `BOOTSTRAP + b` of the configured seed,
//! so the explicit route (an `n × p` influence matrix) and the factored route
//! (one [`InfluenceMap::weighted_sum`] per replicate) see identical multipliers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{stream_rng, streams};
use crate::tangent::{ContrastSpec, GapEstimate, InfluenceMap};
use crate::{Error, Result};

/// Largest contrast family accepted by [`topk_sets`].
pub const MAX_FAMILY: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BootstrapConfig {
    pub draws: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { draws: 1000, alpha: 0.05, seed: 0 }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws < 100 {
            return Err(Error::InvalidArgument(format!("{} bootstrap draws is below the minimum of 100", self.draws)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// Multipliers of replicate `draw`.
pub fn multipliers(n: usize, seed: u64, draw: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, streams::BOOTSTRAP + draw as u64);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Order statistic `⌈(1 − α)·B⌉` (1-based) of the replicate statistics.
pub fn upper_quantile(mut stats: Vec<f64>, alpha: f64) -> f64 {
    stats.sort_by(|a, b| a.total_cmp(b));
    let b = stats.len();
    let k = Float::ceil((1.0 - alpha) * b as f64 - 1e-9).max(1.0) as usize;
    stats[k.min(b) - 1]
}

fn check_sigmas(sigmas: &[f64]) -> Result<()> {
    if sigmas.is_empty() {
        return Err(Error::Empty("bootstrap family"));
    }
    for (j, &s) in sigmas.iter().enumerate() {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::DegenerateContrast(j));
        }
    }
    Ok(())
}

/// Replicate statistics from an explicit `n × p` influence matrix.
pub fn bootstrap_statistics(influence: &DMatrix<f64>, sigmas: &[f64], config: &BootstrapConfig) -> Result<Vec<f64>> {
    config.validate()?;
    check_sigmas(sigmas)?;
    if influence.ncols() != sigmas.len() {
        return Err(Error::DimensionMismatch("one sigma per influence column is required".into()));
    }
    let n = influence.nrows();
    let scale = 1.0 / Float::sqrt(n as f64);
    Ok((0..config.draws)
        .map(|b| {
            let xi = nalgebra::DVector::from_vec(multipliers(n, config.seed, b));
            let proj = influence.tr_mul(&xi);
            proj.iter().zip(sigmas).map(|(v, s)| Float::abs(v * scale / s)).fold(0.0, f64::max)
        })
        .collect())
}

/// Critical value from an explicit `n × p` influence matrix.
pub fn bootstrap_critical_value(influence: &DMatrix<f64>, sigmas: &[f64], config: &BootstrapConfig) -> Result<f64> {
    Ok(upper_quantile(bootstrap_statistics(influence, sigmas, config)?, config.alpha))
}

/// Replicate statistics for several families at once, evaluated through
/// [`InfluenceMap::weighted_sum`]; one weighted sum per replicate serves every
/// family. `sigmas[f][j]` is the scale `σ̂` of contrast `j` of family `f`.
pub fn factored_statistics<M: InfluenceMap + ?Sized>(
    map: &M,
    families: &[&[ContrastSpec]],
    sigmas: &[Vec<f64>],
    config: &BootstrapConfig,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    if families.len() != sigmas.len() {
        return Err(Error::DimensionMismatch("one sigma list per family is required".into()));
    }
    for (fam, s) in families.iter().zip(sigmas) {
        check_sigmas(s)?;
        if fam.len() != s.len() {
            return Err(Error::DimensionMismatch("one sigma per contrast is required".into()));
        }
    }
    let n = map.sample_size();
    let scale = 1.0 / Float::sqrt(n as f64);
    let mut stats = alloc::vec![Vec::with_capacity(config.draws); families.len()];
    for b in 0..config.draws {
        let y = map.weighted_sum(&multipliers(n, config.seed, b));
        for ((fam, s), out) in families.iter().zip(sigmas).zip(stats.iter_mut()) {
            let t = fam
                .iter()
                .zip(s)
                .map(|(c, sj)| Float::abs(c.dot(&y) * scale / sj))
                .fold(0.0, f64::max);
            out.push(t);
        }
    }
    Ok(stats)
}

/// Critical value of one family through the factored route.
pub fn bootstrap_critical_value_factored<M: InfluenceMap + ?Sized>(
    map: &M,
    family: &[ContrastSpec],
    sigmas: &[f64],
    config: &BootstrapConfig,
) -> Result<f64> {
    let stats = factored_statistics(map, &[family], &[sigmas.to_vec()], config)?;
    Ok(upper_quantile(stats.into_iter().next().unwrap_or_default(), config.alpha))
}

/// Simultaneous interval for `Θ[t, competitor] − Θ[t, model]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GapInterval {
    pub task: usize,
    pub competitor: usize,
    pub model: usize,
    pub estimate: f64,
    /// Infinite when the gap is not estimable; such intervals are vacuous.
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankBand {
    pub task: usize,
    pub model: usize,
    pub lower: usize,
    pub upper: usize,
    pub certified_above: usize,
    pub certified_below: usize,
}

impl RankBand {
    /// Number of ranks in the band, `upper − lower + 1`.
    pub fn width(&self) -> usize {
        self.upper - self.lower + 1
    }

    pub fn contains(&self, rank: usize) -> bool {
        self.lower <= rank && rank <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Decision {
    CertifiedIn,
    CertifiedOut,
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TopKDecision {
    pub task: usize,
    pub model: usize,
    pub k: usize,
    pub decision: Decision,
}

/// Inner and outer top-K sets of one task.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TopKSet {
    pub task: usize,
    pub inner: Vec<usize>,
    pub outer: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CertificationReport {
    pub family: String,
    pub alpha: f64,
    pub draws: usize,
    pub critical_value: f64,
    pub intervals: Vec<GapInterval>,
    pub rank_bands: Vec<RankBand>,
    pub topk: Vec<TopKDecision>,
    pub topk_sets: Option<Vec<TopKSet>>,
}

/// Rank band of `model` from its `d_m − 1` gap intervals
/// `Θ[t,ℓ] − Θ[t,model]`, `ℓ ≠ model`: competitors with a positive lower
/// endpoint are certified above, those with a negative upper endpoint below.
pub fn rank_band(task: usize, model: usize, model_count: usize, intervals: &[(f64, f64)]) -> Result<RankBand> {
    if intervals.len() + 1 != model_count {
        return Err(Error::InvalidArgument(format!(
            "rank band needs {} gaps, got {}",
            model_count - 1,
            intervals.len()
        )));
    }
    if intervals.iter().any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
        return Err(Error::InvalidArgument("inconsistent interval in gap family".into()));
    }
    let above = intervals.iter().filter(|(l, _)| *l > 0.0).count();
    let below = intervals.iter().filter(|(_, u)| *u < 0.0).count();
    Ok(RankBand {
        task,
        model,
        lower: 1 + above,
        upper: model_count - below,
        certified_above: above,
        certified_below: below,
    })
}

/// Three-way top-K rule for a rank band.
pub fn topk_decide(band: &RankBand, k: usize) -> TopKDecision {
    let decision = if band.upper <= k {
        Decision::CertifiedIn
    } else if band.lower > k {
        Decision::CertifiedOut
    } else {
        Decision::Unresolved
    };
    TopKDecision { task: band.task, model: band.model, k, decision }
}

/// Tasks covered by a certification family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Scope {
    OneTask(usize),
    AllTasks,
}

/// Estimates for a family, with non-estimable gaps reported as `None`.
fn family_estimates<M: InfluenceMap + ?Sized>(map: &M, family: &[ContrastSpec]) -> Result<Vec<Option<GapEstimate>>> {
    map.summarize(family)
        .into_iter()
        .map(|r| match r {
            Ok(g) => Ok(Some(g)),
            Err(Error::InsufficientConnectivity { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Estimable members of a family with their scales `σ̂ = SE·√n`.
fn live_members(
    family: &[ContrastSpec],
    estimates: &[Option<GapEstimate>],
    root_n: f64,
) -> Result<(Vec<ContrastSpec>, Vec<f64>)> {
    let mut live = Vec::new();
    let mut sigmas = Vec::new();
    for (j, (c, e)) in family.iter().zip(estimates).enumerate() {
        if let Some(e) = e {
            let sigma = e.std_error * root_n;
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(Error::DegenerateContrast(j));
            }
            live.push(c.clone());
            sigmas.push(sigma);
        }
    }
    Ok((live, sigmas))
}

/// Critical values of several families from one set of bootstrap replicates,
/// together with the estimates of every member. Families without estimable
/// members get an infinite critical value.
fn calibrate_many<M: InfluenceMap + ?Sized>(
    map: &M,
    families: &[Vec<ContrastSpec>],
    config: &BootstrapConfig,
) -> Result<Vec<(f64, Vec<Option<GapEstimate>>)>> {
    let all: Vec<ContrastSpec> = families.iter().flatten().cloned().collect();
    let mut estimates = family_estimates(map, &all)?.into_iter();
    let root_n = Float::sqrt(map.sample_size() as f64);
    let mut per_family = Vec::with_capacity(families.len());
    let mut live_families = Vec::new();
    let mut live_sigmas = Vec::new();
    for fam in families {
        let est: Vec<Option<GapEstimate>> = estimates.by_ref().take(fam.len()).collect();
        let (live, sigmas) = live_members(fam, &est, root_n)?;
        if !live.is_empty() {
            live_families.push(live);
            live_sigmas.push(sigmas);
        }
        per_family.push(est);
    }
    let refs: Vec<&[ContrastSpec]> = live_families.iter().map(|f| f.as_slice()).collect();
    let mut crits = if refs.is_empty() {
        Vec::new()
    } else {
        factored_statistics(map, &refs, &live_sigmas, config)?
            .into_iter()
            .map(|stats| upper_quantile(stats, config.alpha))
            .collect()
    }
    .into_iter();
    Ok(per_family
        .into_iter()
        .map(|est| {
            let crit = if est.iter().any(Option::is_some) { crits.next().unwrap_or(f64::INFINITY) } else { f64::INFINITY };
            (crit, est)
        })
        .collect())
}

fn interval(task: usize, competitor: usize, model: usize, est: Option<GapEstimate>, crit: f64) -> GapInterval {
    match est {
        Some(e) => GapInterval {
            task,
            competitor,
            model,
            estimate: e.estimate,
            std_error: e.std_error,
            lower: e.estimate - crit * e.std_error,
            upper: e.estimate + crit * e.std_error,
        },
        None => GapInterval {
            task,
            competitor,
            model,
            estimate: f64::NAN,
            std_error: f64::INFINITY,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        },
    }
}

/// Simultaneous rank bands and top-K decisions for `model` on the tasks in
/// `scope`, with one critical value for the whole family
/// `{(t, ℓ) : t ∈ scope, ℓ ≠ model}`.
pub fn certify_model<M: InfluenceMap + ?Sized>(
    map: &M,
    scope: Scope,
    model: usize,
    k: usize,
    config: &BootstrapConfig,
) -> Result<CertificationReport> {
    Ok(certify_models(map, &[(scope, model)], k, config)?.remove(0))
}

/// [`certify_model`] for several independent targets. Each target is its own
/// family with its own critical value; all families are calibrated from the
/// same bootstrap replicates.
pub fn certify_models<M: InfluenceMap + ?Sized>(
    map: &M,
    targets: &[(Scope, usize)],
    k: usize,
    config: &BootstrapConfig,
) -> Result<Vec<CertificationReport>> {
    config.validate()?;
    let idx = map.index();
    let dm = idx.model_count();
    if k == 0 || k >= dm {
        return Err(Error::InvalidArgument(format!("K = {k} must lie in [1, {})", dm)));
    }
    let mut task_lists = Vec::with_capacity(targets.len());
    let mut families = Vec::with_capacity(targets.len());
    for &(scope, model) in targets {
        if model >= dm {
            return Err(Error::InvalidArgument(format!("model {model} out of range")));
        }
        let tasks: Vec<usize> = match scope {
            Scope::OneTask(t) if t < idx.task_count() => alloc::vec![t],
            Scope::OneTask(t) => return Err(Error::InvalidArgument(format!("task {t} out of range"))),
            Scope::AllTasks => (0..idx.task_count()).collect(),
        };
        let family: Vec<ContrastSpec> = tasks
            .iter()
            .flat_map(|&t| (0..dm).filter(move |&l| l != model).map(move |l| ContrastSpec::gap(t, l, model)))
            .collect();
        task_lists.push(tasks);
        families.push(family);
    }
    let calibrated = calibrate_many(map, &families, config)?;
    let mut reports = Vec::with_capacity(targets.len());
    for ((&(scope, model), tasks), (crit, estimates)) in targets.iter().zip(&task_lists).zip(calibrated) {
        let mut intervals = Vec::with_capacity(estimates.len());
        let mut est = estimates.into_iter();
        for &t in tasks {
            for l in (0..dm).filter(|&l| l != model) {
                intervals.push(interval(t, l, model, est.next().flatten(), crit));
            }
        }
        let mut rank_bands = Vec::with_capacity(tasks.len());
        let mut topk = Vec::with_capacity(tasks.len());
        for (i, &t) in tasks.iter().enumerate() {
            let block: Vec<(f64, f64)> =
                intervals[i * (dm - 1)..(i + 1) * (dm - 1)].iter().map(|g| (g.lower, g.upper)).collect();
            let band = rank_band(t, model, dm, &block)?;
            topk.push(topk_decide(&band, k));
            rank_bands.push(band);
        }
        let family = match scope {
            Scope::OneTask(t) => format!("one_task(task={t}, model={model})"),
            Scope::AllTasks => format!("all_tasks(model={model})"),
        };
        reports.push(CertificationReport {
            family,
            alpha: config.alpha,
            draws: config.draws,
            critical_value: crit,
            intervals,
            rank_bands,
            topk,
            topk_sets: None,
        });
    }
    Ok(reports)
}

/// Inner and outer top-K sets of every task from one critical value over all
/// ordered pairs. `intervals[t]` maps `(ℓ, m)` to the interval of
/// `Θ[t,ℓ] − Θ[t,m]`, stored row-major in a `d_m × d_m` array (diagonal unused).
pub fn topk_sets_from_intervals(intervals: &[Vec<(f64, f64)>], model_count: usize, k: usize) -> Result<Vec<TopKSet>> {
    let mut out = Vec::with_capacity(intervals.len());
    for (t, grid) in intervals.iter().enumerate() {
        if grid.len() != model_count * model_count {
            return Err(Error::DimensionMismatch("interval grid must be d_m × d_m".into()));
        }
        let mut inner = Vec::new();
        let mut outer = Vec::new();
        for m in 0..model_count {
            let column: Vec<(f64, f64)> = (0..model_count).filter(|&l| l != m).map(|l| grid[l * model_count + m]).collect();
            let band = rank_band(t, m, model_count, &column)?;
            if band.certified_below >= model_count - k {
                inner.push(m);
            }
            if band.certified_above < k {
                outer.push(m);
            }
        }
        if inner.iter().any(|m| !outer.contains(m)) {
            return Err(Error::InvalidArgument(format!("inner set of task {t} escapes the outer set")));
        }
        out.push(TopKSet { task: t, inner, outer });
    }
    Ok(out)
}

/// Simultaneous inner/outer top-K sets for every task. The family holds all
/// `d_t·d_m·(d_m − 1)` ordered gaps; since a gap and its reverse have the same
/// absolute statistic, the bootstrap runs over unordered pairs.
pub fn topk_sets<M: InfluenceMap + ?Sized>(map: &M, k: usize, config: &BootstrapConfig) -> Result<CertificationReport> {
    config.validate()?;
    let idx = map.index();
    let (dt, dm) = (idx.task_count(), idx.model_count());
    let size = dt * dm * (dm - 1);
    if size > MAX_FAMILY {
        return Err(Error::FamilyTooLarge { size, limit: MAX_FAMILY });
    }
    if k == 0 || k >= dm {
        return Err(Error::InvalidArgument(format!("K = {k} must lie in [1, {})", dm)));
    }
    let mut pairs = Vec::with_capacity(size / 2);
    for t in 0..dt {
        for a in 0..dm {
            for b in a + 1..dm {
                pairs.push((t, a, b));
            }
        }
    }
    let family: Vec<ContrastSpec> = pairs.iter().map(|&(t, a, b)| ContrastSpec::gap(t, a, b)).collect();
    let (crit, estimates) = calibrate_many(map, &[family], config)?.remove(0);
    let mut grids = alloc::vec![alloc::vec![(0.0, 0.0); dm * dm]; dt];
    let mut intervals = Vec::with_capacity(size);
    for (&(t, a, b), e) in pairs.iter().zip(estimates) {
        let g = interval(t, a, b, e, crit);
        grids[t][a * dm + b] = (g.lower, g.upper);
        grids[t][b * dm + a] = (-g.upper, -g.lower);
        intervals.push(g);
    }
    let sets = topk_sets_from_intervals(&grids, dm, k)?;
    Ok(CertificationReport {
        family: format!("all_pairs(K={k})"),
        alpha: config.alpha,
        draws: config.draws,
        critical_value: crit,
        intervals,
        rank_bands: Vec::new(),
        topk: Vec::new(),
        topk_sets: Some(sets),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_examples() {
        let b = rank_band(0, 0, 4, &[(1.0, 2.0), (-2.0, -1.0), (-0.5, 0.5)]).unwrap();
        assert_eq!((b.certified_above, b.certified_below, b.lower, b.upper), (1, 1, 2, 3));
        let all_pos = rank_band(0, 0, 4, &[(1.0, 2.0); 3]).unwrap();
        assert_eq!((all_pos.lower, all_pos.upper), (4, 4));
        let vacuous = rank_band(0, 0, 4, &[(-1.0, 1.0); 3]).unwrap();
        assert_eq!((vacuous.lower, vacuous.upper), (1, 4));
        assert!(rank_band(0, 0, 4, &[(-1.0, 1.0); 2]).is_err());
    }

    #[test]
    fn decision_examples() {
        let band = |lower, upper| RankBand { task: 0, model: 0, lower, upper, certified_above: lower - 1, certified_below: 10 - upper };
        assert_eq!(topk_decide(&band(2, 3), 3).decision, Decision::CertifiedIn);
        assert_eq!(topk_decide(&band(4, 7), 3).decision, Decision::CertifiedOut);
        assert_eq!(topk_decide(&band(2, 5), 3).decision, Decision::Unresolved);
    }

    #[test]
    fn quantile_convention() {
        let stats: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(upper_quantile(stats, 0.05), 950.0);
        let stats: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(upper_quantile(stats, 0.5), 50.0);
    }
}
