use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use taskrank::harness::{
    coverage_targets, percentile_ci, run_coverage_experiment, run_normality_experiment, run_sim_sweep, CoverageConfig,
    CoverageScope, NormalityConfig, SweepConfig,
};
use taskrank::ingest::{build_dataset, parse_votes, BuildOptions, TiePolicy, VoteFormat};
use taskrank::io::{read_dataset, write_dataset, write_json, FitArtifact};
use taskrank::{Estimator, Method};
use taskrank_core::certify::{BootstrapConfig, Scope};
use taskrank_core::refine::{fit_joint, JointConfig};
use taskrank_core::split::{assign_folds, subsample};
use taskrank_core::synth::{simulate, SyntheticConfig};
use taskrank_core::tangent::ContrastSpec;
use taskrank_core::TaskModelIndex;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn small(n: usize) -> SyntheticConfig {
    SyntheticConfig { task_count: 6, model_count: 8, rank: 2, amplitude: 3.0, n, temperature: 1.0, seed: 4 }
}

fn estimator() -> Estimator {
    Estimator { folds: 4, ..Estimator::new(Method::Joint, JointConfig::new(2, 3.0)) }
}

/// Survivor count of the 200-vote fixture, recomputed from the raw text.
fn brute_force_survivors(text: &str, top: usize, keep_ties: bool) -> usize {
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for r in &rows {
        *freq.entry(r[0]).or_default() += 1;
        *freq.entry(r[1]).or_default() += 1;
    }
    let mut order: Vec<(&str, usize)> = freq.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let kept: BTreeSet<&str> = order.iter().take(top).map(|(m, _)| *m).collect();
    rows.iter()
        .filter(|r| kept.contains(r[0]) && kept.contains(r[1]))
        .filter(|r| keep_ties || r[2] == "model_a" || r[2] == "model_b")
        .count()
}

#[test]
fn fixture_survivor_counts_match_brute_force() {
    let path = fixture("votes_200.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let votes = parse_votes(&path, VoteFormat::Csv).unwrap();
    assert_eq!(votes.votes.len(), 200);
    for top in [2, 3, 4, 6] {
        for (policy, keep_ties) in [(TiePolicy::Drop, false), (TiePolicy::Split, true)] {
            let built =
                build_dataset(&votes.votes, &BuildOptions { top_k_models: top, tie_policy: policy, ..Default::default() }).unwrap();
            assert_eq!(built.dataset.len(), brute_force_survivors(&text, top, keep_ties), "top {top}, {policy:?}");
            assert_eq!(built.dataset.index().model_count(), top);
        }
    }
}

#[test]
fn category_map_merges_and_drops() {
    let votes = parse_votes(&fixture("votes_200.csv"), VoteFormat::Csv).unwrap().votes;
    let map: BTreeMap<String, String> =
        [("coding", "technical"), ("math", "technical")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    let built = build_dataset(&votes, &BuildOptions { top_k_models: 6, category_map: Some(map), ..Default::default() }).unwrap();
    assert_eq!(built.dataset.index().task_names(), ["technical"]);
    let expected = votes.iter().filter(|v| v.category != "chit_chat" && !v.winner.is_tie()).count();
    assert_eq!(built.dataset.len(), expected);
}

#[test]
fn csv_and_jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = simulate(&small(500), 0).unwrap();
    for (name, format) in [("d.csv", VoteFormat::Csv), ("d.jsonl", VoteFormat::Jsonl)] {
        let path = dir.path().join(name);
        write_dataset(&path, &data, format).unwrap();
        let back = read_dataset(&path, format, data.index().clone()).unwrap();
        assert_eq!(back.records(), data.records());
    }
}

#[test]
fn fit_artifact_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = simulate(&small(3000), 1).unwrap();
    let config = JointConfig::new(2, 3.0);
    let fit = fit_joint(&data, &config).unwrap();
    let path = dir.path().join("fit.json");
    write_json(&path, &FitArtifact::from_joint(&fit, &config)).unwrap();
    let back = FitArtifact::load(&path).unwrap();
    assert_eq!(back.scores().unwrap(), fit.scores);
    assert_eq!(back.config, Some(config));
    let factors = back.factors().unwrap().unwrap();
    assert_eq!(factors.left(), fit.factors.left());
    assert_eq!(factors.right(), fit.factors.right());
}

#[test]
fn subsample_and_fold_examples() {
    let (_, data) = simulate(&small(400), 2).unwrap();
    let a = subsample(&data, 0.5, 1).unwrap();
    let b = subsample(&data, 0.5, 2).unwrap();
    assert_eq!(a.len(), 200);
    assert_ne!(a.records(), b.records());
    assert_eq!(subsample(&data, 1.0, 9).unwrap().records(), data.records());

    let folds = assign_folds(6, 6, 3).unwrap();
    assert_eq!(folds.sizes(), vec![1; 6]);
    let mut seen: Vec<usize> = (0..6).flat_map(|k| folds.fold(k)).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..6).collect::<Vec<_>>());
}

#[test]
fn estimator_refuses_bad_rank() {
    let (_, data) = simulate(&small(500), 0).unwrap();
    let mut e = estimator();
    e.joint = JointConfig::new(7, 3.0);
    assert!(matches!(e.fit(&data), Err(taskrank::Error::Config(_))));
    assert!(matches!(e.influence_map(&data).map(|_| ()), Err(taskrank::Error::Config(_))));
}

#[test]
fn sweep_is_deterministic_and_complete() {
    let config = SweepConfig {
        base: small(0),
        n_values: vec![1500, 3000],
        ks: vec![2, 4],
        trials: 3,
        methods: vec![Method::Joint, Method::PerTaskBtl],
        estimator: estimator(),
    };
    let a = run_sim_sweep(&config).unwrap();
    let b = run_sim_sweep(&config).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.rows.len(), 2 * 2 * 2);
    assert_eq!(a.trials.len(), 2 * 3 * 2);
    for row in &a.rows {
        assert_eq!(row.trials, 3);
        assert!((0.0..=1.0).contains(&row.hamming.mean));
        assert!(row.hamming.lower <= row.hamming.mean && row.hamming.mean <= row.hamming.upper);
    }
}

#[test]
fn coverage_experiment_reports_rates() {
    let config = CoverageConfig {
        base: small(4000),
        scopes: vec![CoverageScope::SingleTask, CoverageScope::Simultaneous],
        k: 3,
        bootstrap: BootstrapConfig { draws: 200, ..Default::default() },
        trials: 3,
        methods: vec![Method::Joint, Method::PerTaskBtl],
        estimator: estimator(),
    };
    let result = run_coverage_experiment(&config).unwrap();
    assert_eq!(result.rows.len(), 4);
    for row in &result.rows {
        for rate in [row.coverage.mean, row.family_coverage.mean, row.resolved.mean, row.correct.mean] {
            assert!((0.0..=1.0).contains(&rate));
        }
        assert!(row.correct.mean <= row.resolved.mean);
        assert!((1.0..=8.0).contains(&row.width.mean));
    }
    let single = result.trials.iter().find(|(s, _)| *s == CoverageScope::SingleTask).unwrap();
    assert_eq!(single.1.coverage.len(), 6);

    // Targets do not depend on the trial.
    let targets = coverage_targets(&config.scopes, 4, 6, 8);
    assert_eq!(targets.len(), 7);
    assert!(matches!(targets[6].0, Scope::AllTasks));
    assert_eq!(targets, coverage_targets(&config.scopes, 4, 6, 8));
}

#[test]
fn normality_experiment_on_a_small_problem() {
    let result = run_normality_experiment(&NormalityConfig {
        base: small(4000),
        contrasts: vec![ContrastSpec::gap(0, 0, 1), ContrastSpec::gap(0, 0, 2)],
        trials: 8,
        alpha: 0.05,
        estimator: estimator(),
    })
    .unwrap();
    assert_eq!(result.estimates.len(), 8);
    let p = result.mean_plugin_covariance;
    assert!(p[0][0] > 0.0 && p[1][1] > 0.0 && p[0][1] == p[1][0]);
    assert!((-1.0..=1.0).contains(&result.mean_plugin_correlation));
}

#[test]
fn percentile_interval_of_a_known_sample() {
    let values: Vec<f64> = (1..=100).map(f64::from).collect();
    let e = percentile_ci(&values, 200, 0);
    assert_eq!(e.mean, 50.5);
    // The bootstrap mean has standard deviation about 2.9 here.
    assert!(e.lower > 43.0 && e.lower < 48.0 && e.upper > 53.0 && e.upper < 58.0);
}

#[test]
fn index_names_sort_numerically() {
    let idx = TaskModelIndex::anonymous(12, 3).unwrap();
    let mut sorted = idx.task_names().to_vec();
    sorted.sort();
    assert_eq!(sorted, idx.task_names());
    let _ = Arc::new(idx);
}
