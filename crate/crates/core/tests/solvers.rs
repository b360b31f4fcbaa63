use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use taskrank_core::convex::{default_lambda, fit_convex, loss_gradient, mean_loss, truncate_and_clip, ConvexConfig};
use taskrank_core::linalg::Svd;
use taskrank_core::rng::stream_rng;
use taskrank_core::synth::{pair_at, pair_count, sample_comparisons, SamplingDesign};
use taskrank_core::tangent::{
    fisher_apply, solve_efficient_direction, solve_efficient_direction_dense, tangent_project, CgOptions, ContrastSpec,
    FisherOperator, TangentBasis, TangentSystem,
};
use taskrank_core::{btl_loss, recenter_rows, ComparisonDataset, ComparisonRecord, ScoreMatrix, TaskModelIndex};

fn index(dt: usize, dm: usize) -> Arc<TaskModelIndex> {
    Arc::new(TaskModelIndex::anonymous(dt, dm).unwrap())
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 0);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_scores(dt: usize, dm: usize, scale: f64, seed: u64) -> ScoreMatrix {
    recenter_rows(index(dt, dm), &(gaussian(dt, dm, seed) * scale))
}

/// Every (task, unordered pair) once.
fn exhaustive_records(dt: usize, dm: usize) -> Vec<ComparisonRecord> {
    (0..dt)
        .flat_map(|t| (0..pair_count(dm)).map(move |k| (t, k)))
        .map(|(t, k)| {
            let (a, b) = pair_at(dm, k);
            ComparisonRecord::new(t, a, b, (t + k) % 2 == 0)
        })
        .collect()
}

fn wins(task: usize, a: usize, b: usize, a_wins: usize, b_wins: usize) -> Vec<ComparisonRecord> {
    let mut out = vec![ComparisonRecord::new(task, a, b, true); a_wins];
    out.extend(vec![ComparisonRecord::new(task, a, b, false); b_wins]);
    out
}

#[test]
fn unpenalized_convex_fit_matches_logit_of_win_rates() {
    // With two models per task the MLE gap is the logit of the empirical win rate.
    let mut records = wins(0, 0, 1, 7, 3);
    records.extend(wins(1, 0, 1, 5, 5));
    let data = ComparisonDataset::new(index(2, 2), records).unwrap();
    let config = ConvexConfig {
        lambda: Some(0.0),
        bound: f64::INFINITY,
        rank: 1,
        tol: 1e-15,
        max_iter: 50_000,
        ..Default::default()
    };
    let fit = fit_convex(&data, &config).unwrap();
    let oracle = [(7.0f64 / 3.0).ln(), 0.0];
    for (t, gap) in oracle.iter().enumerate() {
        assert!((fit.scores.gap(t, 0, 1) - gap).abs() < 1e-4, "task {t}: {}", fit.scores.gap(t, 0, 1));
    }
    let btl = taskrank_core::btl::fit(&data, &taskrank_core::btl::BtlOptions { ridge: Some(0.0), ..Default::default() }).unwrap();
    assert!((btl.scores.values() - fit.scores.values()).amax() < 1e-4);
}

#[test]
fn huge_penalty_returns_zero() {
    let truth = random_scores(6, 5, 1.0, 3);
    let data = sample_comparisons(&truth, &SamplingDesign::uniform(truth.index()), 800, 1.0, 4).unwrap();
    let fit = fit_convex(&data, &ConvexConfig { lambda: Some(1e3), rank: 2, ..Default::default() }).unwrap();
    assert!(fit.scores.values().norm() < 1e-6);
}

#[test]
fn accepted_objective_is_monotone() {
    let truth = random_scores(10, 8, 1.5, 5);
    let data = sample_comparisons(&truth, &SamplingDesign::uniform(truth.index()), 3000, 1.0, 6).unwrap();
    let fit = fit_convex(&data, &ConvexConfig { rank: 3, ..Default::default() }).unwrap();
    assert!(fit.converged);
    assert!(fit.objective.windows(2).all(|w| w[1] <= w[0]));
    assert!(fit.scores.max_abs() <= 5.0 + 1e-12);
}

#[test]
fn default_lambda_formula() {
    let idx = index(50, 50);
    let records: Vec<ComparisonRecord> = (0..16000).map(|i| ComparisonRecord::new(i % 50, 0, 1, true)).collect();
    let data = ComparisonDataset::new(idx.clone(), records.clone()).unwrap();
    let lambda = default_lambda(&data, 2.0);
    assert!((lambda - 4.80e-3).abs() < 5e-6, "{lambda}");
    let bigger = ComparisonDataset::new(idx, records.iter().cycle().take(64000).copied().collect()).unwrap();
    assert!((default_lambda(&bigger, 2.0) - lambda / 2.0).abs() < 1e-15);
}

#[test]
fn loss_gradient_matches_central_differences() {
    let truth = random_scores(4, 5, 1.0, 7);
    let data = sample_comparisons(&truth, &SamplingDesign::uniform(truth.index()), 200, 1.0, 8).unwrap();
    let theta = gaussian(4, 5, 9);
    let g = loss_gradient(data.records(), &theta);
    let h = 1e-5;
    for t in 0..4 {
        for m in 0..5 {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[(t, m)] += h;
            minus[(t, m)] -= h;
            let fd = (mean_loss(data.records(), &plus) - mean_loss(data.records(), &minus)) / (2.0 * h);
            assert!((fd - g[(t, m)]).abs() < 1e-6);
        }
    }
}

#[test]
fn scalar_loss_derivative() {
    let h = 1e-5;
    for eta in [-2.0, 0.0, 3.0] {
        for y in [true, false] {
            let fd = (btl_loss(y, eta + h).unwrap() - btl_loss(y, eta - h).unwrap()) / (2.0 * h);
            let exact = taskrank_core::btl_prob(eta).unwrap() - f64::from(u8::from(y));
            assert!((fd - exact).abs() < 1e-6);
        }
    }
}

#[test]
fn truncation_examples() {
    let idx = index(6, 5);
    // Rank-2 matrix inside the box is a fixed point.
    let low = recenter_rows(idx.clone(), &(gaussian(6, 2, 10) * gaussian(2, 5, 11)));
    let scaled = recenter_rows(idx.clone(), &(low.values() * (1.0 / low.max_abs())));
    let same = truncate_and_clip(&scaled, 2, 5.0).unwrap();
    assert!((same.values() - scaled.values()).amax() < 1e-10);

    // Eckart–Young: the rank-1 residual equals the tail singular values.
    let m = recenter_rows(idx.clone(), &(gaussian(6, 3, 12) * gaussian(3, 5, 13)));
    let s = Svd::new(m.values()).unwrap().singular_values;
    let r1 = truncate_and_clip(&m, 1, f64::INFINITY).unwrap();
    let expected = (s[1] * s[1] + s[2] * s[2]).sqrt();
    assert!((r1.frobenius_distance(&m) - expected).abs() < 1e-10);

    // An entry at 2B is clipped to B.
    let two = recenter_rows(index(1, 2), &DMatrix::from_row_slice(1, 2, &[10.0, -10.0]));
    let clipped = truncate_and_clip(&two, 1, 5.0).unwrap();
    assert!((clipped.get(0, 0) - 5.0).abs() < 1e-12);
}

#[test]
fn fisher_apply_examples() {
    let theta = random_scores(3, 4, 1.0, 14);
    let records = exhaustive_records(3, 4);
    assert_eq!(fisher_apply(&DMatrix::zeros(3, 4), &records, &theta).unwrap(), DMatrix::zeros(3, 4));

    let single = [ComparisonRecord::new(1, 0, 2, true)];
    let mut h = DMatrix::zeros(3, 4);
    h[(1, 0)] = 1.0;
    let out = fisher_apply(&h, &single, &theta).unwrap();
    let w = taskrank_core::fisher_weight(theta.gap(1, 0, 2)).unwrap();
    let mut expected = DMatrix::zeros(3, 4);
    expected[(1, 0)] = w;
    expected[(1, 2)] = -w;
    assert!((out - expected).amax() < 1e-15);

    let fisher = FisherOperator::new(&records, &theta).unwrap();
    for seed in 0..4 {
        let (h1, h2) = (gaussian(3, 4, 20 + seed), gaussian(3, 4, 30 + seed));
        assert!((fisher.apply(&h1).dot(&h2) - h1.dot(&fisher.apply(&h2))).abs() < 1e-10);
    }
}

fn rank_one_basis(dt: usize, dm: usize, seed: u64) -> TangentBasis {
    let scores = recenter_rows(index(dt, dm), &(gaussian(dt, 1, seed) * gaussian(1, dm, seed + 1)));
    TangentBasis::from_scores(&scores, 1).unwrap()
}

#[test]
fn conjugate_gradients_match_dense_solve() {
    let (dt, dm) = (3, 4);
    let records = exhaustive_records(dt, dm);
    let fisher = FisherOperator::constant(&records, dt, dm, 0.25).unwrap();
    let basis = rank_one_basis(dt, dm, 40);
    let options = CgOptions::default();
    for (t, a, b) in [(0, 0, 1), (2, 3, 1), (1, 2, 0)] {
        let gamma = ContrastSpec::gap(t, a, b);
        let cg = solve_efficient_direction(&gamma, &basis, &fisher, &options).unwrap();
        let dense = solve_efficient_direction_dense(&gamma, &basis, &fisher, &options).unwrap();
        assert!((&cg - &dense).amax() < 1e-6);
        let system = TangentSystem::new(basis.clone(), &fisher, &options).unwrap();
        assert!((system.direction(&gamma) - &dense).amax() < 1e-6);

        // Defining contract: P_T G P_T H = P_T Γ.
        let lhs = tangent_project(&fisher.apply(&cg), &basis);
        let rhs = tangent_project(&gamma.to_dense(dt, dm), &basis);
        assert!((lhs - &rhs).norm() <= 1e-6 * rhs.norm());
    }
}

#[test]
fn efficient_direction_is_linear() {
    let theta = random_scores(5, 6, 1.0, 50);
    let data = sample_comparisons(&theta, &SamplingDesign::uniform(theta.index()), 2000, 1.0, 51).unwrap();
    let fisher = FisherOperator::new(data.records(), &theta).unwrap();
    let basis = TangentBasis::from_scores(&recenter_rows(index(5, 6), &(gaussian(5, 2, 52) * gaussian(2, 6, 53))), 2).unwrap();
    let options = CgOptions::default();
    let g1 = ContrastSpec::gap(0, 1, 2);
    let g2 = ContrastSpec::gap(3, 0, 5);
    let sum = ContrastSpec::new(vec![(0, 1, 1.0), (0, 2, -1.0), (3, 0, 1.0), (3, 5, -1.0)]).unwrap();
    let h1 = solve_efficient_direction(&g1, &basis, &fisher, &options).unwrap();
    let h2 = solve_efficient_direction(&g2, &basis, &fisher, &options).unwrap();
    let h = solve_efficient_direction(&sum, &basis, &fisher, &options).unwrap();
    assert!((h - h1 - h2).amax() < 1e-6);
    let system = TangentSystem::new(basis, &fisher, &options).unwrap();
    assert!((system.direction(&sum) - solve_efficient_direction(&sum, system.basis(), &fisher, &options).unwrap()).amax() < 1e-6);
}
