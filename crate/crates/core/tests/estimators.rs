use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use taskrank_core::btl::{self, BtlOptions, WaldInference};
use taskrank_core::linalg::{orthonormalize, Svd};
use taskrank_core::model::sigmoid;
use taskrank_core::refine::{refine, stage_a_right_factor, stage_b_left_update, stage_c_column_update, RefineConfig, RefineSplits};
use taskrank_core::rng::stream_rng;
use taskrank_core::split::{assign_folds, subsample};
use taskrank_core::synth::{generate_truth, sample_comparisons, PairWeights, SamplingDesign, SyntheticConfig};
use taskrank_core::{recenter_rows, ComparisonDataset, ComparisonRecord, Error, FactoredScores, ScoreMatrix, TaskModelIndex};

fn index(dt: usize, dm: usize) -> Arc<TaskModelIndex> {
    Arc::new(TaskModelIndex::anonymous(dt, dm).unwrap())
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 0);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn wins(task: usize, a: usize, b: usize, a_wins: usize, b_wins: usize) -> Vec<ComparisonRecord> {
    let mut out = vec![ComparisonRecord::new(task, a, b, true); a_wins];
    out.extend(vec![ComparisonRecord::new(task, a, b, false); b_wins]);
    out
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) > 0.0 && f(hi) < 0.0, "no sign change on [{lo}, {hi}]");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn per_task_fit_matches_gradient_descent() {
    let mut records = wins(0, 0, 1, 3, 1);
    records.extend(wins(0, 1, 2, 2, 2));
    records.extend(wins(0, 2, 0, 1, 3));
    assert_eq!(records.len(), 12);
    let data = ComparisonDataset::new(index(1, 3), records.clone()).unwrap();
    let ridge = 0.1;
    let fit = btl::fit(&data, &BtlOptions { ridge: Some(ridge), ..Default::default() }).unwrap();
    assert!(fit.converged[0]);

    let mut theta = [0.0f64; 3];
    for _ in 0..20_000 {
        let mut g = theta.map(|x| ridge * x);
        for r in &records {
            let c = sigmoid(theta[r.model_a] - theta[r.model_b]) - r.y();
            g[r.model_a] += c;
            g[r.model_b] -= c;
        }
        for m in 0..3 {
            theta[m] -= 0.05 * g[m];
        }
    }
    for m in 0..3 {
        assert!((fit.scores.get(0, m) - theta[m]).abs() < 1e-3);
    }
}

#[test]
fn per_task_fit_handles_separation_and_symmetry() {
    let mut records = wins(0, 0, 1, 10, 0);
    records.extend(wins(1, 0, 1, 5, 5));
    let data = ComparisonDataset::new(index(2, 2), records).unwrap();
    let fit = btl::fit(&data, &BtlOptions::default()).unwrap();
    let gap = fit.scores.gap(0, 0, 1);
    assert!(gap.is_finite() && gap > 5.0, "{gap}");
    assert!(fit.scores.gap(1, 0, 1).abs() < 1e-8);
}

#[test]
fn disconnected_task_has_no_wald_interval() {
    let mut records = wins(0, 0, 1, 3, 2);
    records.extend(wins(0, 2, 3, 1, 4));
    records.extend(wins(1, 0, 1, 2, 2));
    records.extend(wins(1, 1, 2, 2, 1));
    records.extend(wins(1, 2, 3, 3, 1));
    let data = ComparisonDataset::new(index(2, 4), records).unwrap();
    let fit = btl::fit(&data, &BtlOptions::default()).unwrap();
    let wald = WaldInference::new(&data, &fit).unwrap();
    assert!(!wald.task_available(0));
    assert!(wald.task_available(1));
    assert!(matches!(wald.gap(0, 0, 2), Err(Error::InsufficientConnectivity { task: 0 })));
    assert!(wald.gap(1, 0, 3).unwrap().std_error > 0.0);
}

#[test]
fn wald_intervals_cover_at_nominal_rate() {
    let truth = recenter_rows(index(1, 4), &DMatrix::from_row_slice(1, 4, &[0.5, 0.0, -0.2, -0.3]));
    let design = SamplingDesign::uniform(truth.index());
    let target = truth.gap(0, 0, 1);
    let trials = 300;
    let (mut covered, mut se_small, mut se_large) = (0, 0.0, 0.0);
    for trial in 0..trials {
        let data = sample_comparisons(&truth, &design, 600, 1.0, 1000 + trial).unwrap();
        let fit = btl::fit(&data, &BtlOptions::default()).unwrap();
        let g = WaldInference::new(&data, &fit).unwrap().gap(0, 0, 1).unwrap();
        if (g.estimate - target).abs() <= 1.959964 * g.std_error {
            covered += 1;
        }
        se_small += g.std_error;
        if trial < 50 {
            let big = sample_comparisons(&truth, &design, 1200, 1.0, 5000 + trial).unwrap();
            let fit = btl::fit(&big, &BtlOptions::default()).unwrap();
            se_large += WaldInference::new(&big, &fit).unwrap().gap(0, 0, 1).unwrap().std_error;
        }
    }
    let coverage = covered as f64 / trials as f64;
    assert!(coverage >= 0.90, "coverage {coverage}");
    let ratio = (se_large / 50.0) / (se_small / trials as f64);
    assert!((0.6..=0.82).contains(&ratio), "ratio {ratio}");
}

#[test]
fn stage_b_matches_bisection_for_rank_one() {
    let idx = index(1, 3);
    let right = DMatrix::from_column_slice(3, 1, &[1.0, 0.5, -1.5]);
    let factors = FactoredScores::new(idx, DMatrix::from_element(1, 1, 0.2), right.clone()).unwrap();
    let current = factors.product().into_values();
    let mut records = wins(0, 0, 1, 3, 2);
    records.extend(wins(0, 1, 2, 1, 4));
    records.extend(wins(0, 0, 2, 2, 2));
    let config = RefineConfig { rank: 1, newton_tol: 1e-12, ..Default::default() };
    let (left, failed) = stage_b_left_update(&factors, &current, &records, &config);
    assert!(failed.is_empty());

    let score = |theta: f64| -> f64 {
        let mut s = 0.0;
        for r in &records {
            for side in [*r, r.flipped()] {
                let x = right[(side.model_a, 0)];
                s += x * (side.y() - sigmoid(x * theta - current[(0, side.model_b)]));
            }
        }
        s
    };
    let root = bisect(score, -50.0, 50.0);
    assert!((left[(0, 0)] - root).abs() < 1e-8, "{} vs {root}", left[(0, 0)]);
}

#[test]
fn stage_c_matches_bisection_for_rank_one() {
    let left = DMatrix::from_column_slice(2, 1, &[1.0, -0.7]);
    let right = DMatrix::from_column_slice(3, 1, &[0.6, 0.1, -0.7]);
    let current = &left * right.transpose();
    let mut records = Vec::new();
    for t in 0..2 {
        records.extend(wins(t, 0, 1, 3, 2));
        records.extend(wins(t, 1, 2, 2, 3));
        records.extend(wins(t, 0, 2, 3, 1));
    }
    let config = RefineConfig { rank: 1, newton_tol: 1e-10, ..Default::default() };
    let (out, failed) = stage_c_column_update(&left, &right, &current, &records, &config);
    assert!(failed.is_empty(), "{failed:?} {out}");

    let mut solved = [0.0; 3];
    for (m, slot) in solved.iter_mut().enumerate() {
        let score = |a: f64| -> f64 {
            records
                .iter()
                .filter_map(|r| r.oriented_for(m))
                .map(|s| {
                    let x = left[(s.task, 0)];
                    x * (s.y() - sigmoid(x * a - current[(s.task, s.model_b)]))
                })
                .sum()
        };
        *slot = bisect(score, -50.0, 50.0);
    }
    let mean = solved.iter().sum::<f64>() / 3.0;
    for m in 0..3 {
        assert!((out[(m, 0)] - (solved[m] - mean)).abs() < 1e-8);
    }
}

#[test]
fn stages_without_records_keep_their_input() {
    let idx = index(2, 3);
    let right = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, -1.0]);
    let factors = FactoredScores::new(idx, DMatrix::from_column_slice(2, 1, &[0.3, -0.4]), right.clone()).unwrap();
    let current = factors.product().into_values();
    let records = wins(0, 0, 1, 2, 1);
    let config = RefineConfig { rank: 1, ..Default::default() };
    let (left, _) = stage_b_left_update(&factors, &current, &records, &config);
    assert_eq!(left[(1, 0)], -0.4);
}

#[test]
fn stage_a_reconstructs_incoherent_low_rank_input() {
    let (dt, dm) = (12, 20);
    let init = recenter_rows(index(dt, dm), &(gaussian(dt, 2, 60) * gaussian(2, dm, 61)));
    let (factors, capped) = stage_a_right_factor(&init, 2, 4.0).unwrap();
    assert_eq!(capped, 0);
    assert!((factors.product().values() - init.values()).amax() < 1e-8);
    let ones = DVector::from_element(dm, 1.0);
    assert!((factors.right().transpose() * ones).amax() < 1e-10);
}

#[test]
fn stage_a_caps_spiky_rows() {
    let (dt, dm, cap) = (6, 9, 0.5);
    let mut w = gaussian(dm, 2, 70);
    w[(0, 0)] = 8.0;
    w[(0, 1)] = -8.0;
    let init = recenter_rows(index(dt, dm), &(gaussian(dt, 2, 71) * w.transpose()));
    let (factors, capped) = stage_a_right_factor(&init, 2, cap).unwrap();

    // Sign-free oracle: R Rᵀ = P⊥ D Q Qᵀ D P⊥, Q an orthonormal basis of the row space.
    let q = orthonormalize(&init.values().transpose(), &[]);
    let proj = &q * q.transpose();
    let limit = cap / (dm as f64).sqrt();
    let scale: Vec<f64> = (0..dm).map(|i| (limit / proj[(i, i)].sqrt()).min(1.0)).collect();
    let d = DMatrix::from_diagonal(&DVector::from_vec(scale.clone()));
    let center = DMatrix::identity(dm, dm) - DMatrix::from_element(dm, dm, 1.0 / dm as f64);
    let expected = &center * &d * proj * &d * &center;
    let r = factors.right();
    assert!((r * r.transpose() - expected).amax() < 1e-10);
    assert_eq!(capped, scale.iter().filter(|&&s| s < 1.0).count());
    assert!(capped >= 1);
}

#[test]
fn refinement_from_truth_does_not_degrade() {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let config = SyntheticConfig {
            task_count: 20,
            model_count: 20,
            rank: 2,
            amplitude: 3.0,
            n: 50_000,
            seed,
            ..Default::default()
        };
        let truth = generate_truth(&config).unwrap();
        let data = sample_comparisons(&truth, &SamplingDesign::uniform(truth.index()), config.n, 1.0, 100 + seed).unwrap();
        let all: Vec<usize> = (0..data.len()).collect();
        let splits = RefineSplits { stage_b: all.clone(), stage_c: all };
        let out = refine(&truth, &data, &splits, &RefineConfig { rank: 2, ..Default::default() }).unwrap();
        worst = worst.max(out.scores.max_abs_distance(&truth));
        let s = Svd::new(out.scores.values()).unwrap().singular_values;
        assert!(s[2] < 1e-8 * s[0]);
    }
    assert!(worst < 1.0, "worst sup error {worst}");
}

#[test]
fn synthetic_truth_has_requested_structure() {
    let config = SyntheticConfig { task_count: 50, model_count: 50, rank: 5, seed: 7, ..Default::default() };
    let truth = generate_truth(&config).unwrap();
    assert_eq!(truth, generate_truth(&config).unwrap());
    assert!((truth.max_abs() - 5.0).abs() < 1e-12);
    for t in 0..50 {
        assert!(truth.values().row(t).sum().abs() < 1e-9);
    }
    let s = Svd::new(truth.values()).unwrap().singular_values;
    assert!(s[4] > 1e-3 * s[0]);
    assert!(s[5] < 1e-10 * s[0]);

    let tiny = SyntheticConfig { task_count: 2, model_count: 2, rank: 1, ..Default::default() };
    let t = generate_truth(&tiny).unwrap();
    assert!((t.gap(0, 0, 1).abs() - 10.0).abs() < 1e-12 || (t.gap(1, 0, 1).abs() - 10.0).abs() < 1e-12);
}

fn higher_model_win_rate(truth: &ScoreMatrix, data: &ComparisonDataset) -> f64 {
    let hits = data
        .records()
        .iter()
        .filter(|r| (truth.gap(r.task, r.model_a, r.model_b) > 0.0) == r.outcome)
        .count();
    hits as f64 / data.len() as f64
}

#[test]
fn sampled_outcomes_follow_the_model() {
    let truth = recenter_rows(index(1, 2), &DMatrix::from_row_slice(1, 2, &[5.0, -5.0]));
    let design = SamplingDesign::uniform(truth.index());
    let sharp = sample_comparisons(&truth, &design, 100_000, 1.0, 1).unwrap();
    assert!(higher_model_win_rate(&truth, &sharp) >= 0.9995);
    let soft = sample_comparisons(&truth, &design, 100_000, 10.0, 2).unwrap();
    assert!((higher_model_win_rate(&truth, &soft) - sigmoid(1.0)).abs() < 0.005);

    let truth = recenter_rows(index(2, 3), &gaussian(2, 3, 3));
    let skewed = SamplingDesign { task_weights: vec![0.75, 0.25], pair_weights: PairWeights::Uniform };
    let data = sample_comparisons(&truth, &skewed, 100_000, 1.0, 4).unwrap();
    let share = data.records().iter().filter(|r| r.task == 0).count() as f64 / 1e5;
    assert!((share - 0.75).abs() < 0.01);
    let pinned = SamplingDesign {
        task_weights: vec![0.5, 0.5],
        pair_weights: PairWeights::Custom(vec![vec![0.98, 0.01, 0.01], vec![1.0 / 3.0; 3]]),
    };
    let data = sample_comparisons(&truth, &pinned, 20_000, 1.0, 5).unwrap();
    let first = data.records().iter().filter(|r| r.task == 0 && r.model_a.max(r.model_b) == 1).count() as f64;
    let task0 = data.records().iter().filter(|r| r.task == 0).count() as f64;
    assert!((first / task0 - 0.98).abs() < 0.01);
    assert!(SamplingDesign { task_weights: vec![0.5, 0.6], pair_weights: PairWeights::Uniform }.validate(truth.index()).is_err());
}

#[test]
fn folds_and_subsamples() {
    let folds = assign_folds(10, 3, 1).unwrap();
    assert_eq!(folds.sizes(), vec![4, 3, 3]);
    let mut all: Vec<usize> = (0..3).flat_map(|k| folds.fold(k)).collect();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert_eq!(folds.complement(0).len(), 6);
    assert!(assign_folds(2, 3, 1).is_err());

    let data = ComparisonDataset::new(index(1, 2), wins(0, 0, 1, 6, 4)).unwrap();
    assert_eq!(subsample(&data, 0.25, 9).unwrap().len(), 3);
    assert_eq!(subsample(&data, 1.0, 9).unwrap(), data);
    assert!(subsample(&data, 0.0, 9).is_err());
}
