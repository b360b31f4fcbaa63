//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! Run alone with `cargo test -p taskrank --test acceptance`.

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use taskrank::harness::{
    run_coverage_experiment, run_normality_experiment, run_sim_sweep, CoverageConfig, CoverageScope, NormalityConfig,
    SweepConfig,
};
use taskrank::ingest::{build_dataset, parse_votes, BuildOptions, VoteFormat};
use taskrank::{Estimator, Method};
use taskrank_core::certify::{certify_models, BootstrapConfig, Scope};
use taskrank_core::convex::{fit_convex, loss_gradient, mean_loss, ConvexConfig};
use taskrank_core::linalg::{helmert_basis, orthonormalize, orthonormalize_against_ones};
use taskrank_core::metrics::hamming_boundary_check;
use taskrank_core::refine::JointConfig;
use taskrank_core::rng::{stream_rng, StreamRng};
use taskrank_core::split::subsample;
use taskrank_core::synth::{pair_at, pair_count, sample_comparisons, SamplingDesign, SyntheticConfig};
use taskrank_core::tangent::{
    solve_efficient_direction, solve_efficient_direction_dense, tangent_project, CgOptions, ContrastSpec, FisherOperator,
    TangentBasis,
};
use taskrank_core::{recenter_rows, ComparisonDataset, ComparisonRecord, DMatrix, DVector, TaskModelIndex};

type Outcome = (bool, String);
type Check = (&'static str, fn() -> Outcome);

const N_VALUES: [usize; 4] = [4000, 8000, 16_000, 32_000];
const JOINT_HAMMING_K5: [f64; 4] = [0.482, 0.339, 0.237, 0.167];
const JOINT_HAMMING_K10: [f64; 4] = [0.388, 0.257, 0.181, 0.129];

fn simulation_base(n: usize) -> SyntheticConfig {
    SyntheticConfig { task_count: 50, model_count: 50, rank: 5, amplitude: 5.0, n, temperature: 1.0, seed: 2024 }
}

fn joint_estimator(rank: usize) -> Estimator {
    Estimator::new(Method::Joint, JointConfig::new(rank, 5.0))
}

fn uniform(rng: &mut StreamRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn index(dt: usize, dm: usize) -> Arc<TaskModelIndex> {
    Arc::new(TaskModelIndex::anonymous(dt, dm).unwrap())
}

/// Criteria 1 and 2 share one sweep: 100 trials per sample size.
fn sweep_criteria() -> (Outcome, Outcome) {
    let sweep = run_sim_sweep(&SweepConfig {
        base: simulation_base(0),
        n_values: N_VALUES.to_vec(),
        ks: vec![5, 10],
        trials: 100,
        methods: vec![Method::Joint, Method::PerTaskBtl],
        estimator: joint_estimator(5),
    });
    let sweep = match sweep {
        Ok(s) => s,
        Err(e) => return ((false, format!("sweep failed: {e}")), (false, format!("sweep failed: {e}"))),
    };

    let inf = |n| sweep.row(n, Method::Joint, 5).unwrap().inf_error.mean;
    let ratio = inf(8000) / inf(32_000);
    let c1 = (
        (1.4..=2.9).contains(&ratio),
        format!("sup-norm error {:.4} at n=8000, {:.4} at n=32000, ratio {ratio:.3} (want [1.4, 2.9])", inf(8000), inf(32_000)),
    );

    let mut ok = true;
    let mut cells = Vec::new();
    for (k, paper) in [(5, JOINT_HAMMING_K5), (10, JOINT_HAMMING_K10)] {
        for (i, &n) in N_VALUES.iter().enumerate() {
            let joint = sweep.row(n, Method::Joint, k).unwrap().hamming.mean;
            let btl = sweep.row(n, Method::PerTaskBtl, k).unwrap().hamming.mean;
            ok &= joint < btl && (joint - paper[i]).abs() <= 0.05;
            cells.push(format!("K={k} n={n}: {joint:.3} vs {btl:.3}"));
        }
    }
    (c1, (ok, format!("joint vs per-task Hamming, 100 trials: {}", cells.join("; "))))
}

fn criterion_3() -> Outcome {
    let result = run_normality_experiment(&NormalityConfig {
        base: simulation_base(16_000),
        contrasts: vec![ContrastSpec::gap(0, 0, 1), ContrastSpec::gap(0, 0, 2)],
        trials: 200,
        alpha: 0.05,
        estimator: joint_estimator(5),
    });
    match result {
        Err(e) => (false, format!("experiment failed: {e}")),
        Ok(r) => {
            let gap = r.max_relative_covariance_gap();
            let e = r.empirical_covariance;
            let p = r.mean_plugin_covariance;
            (
                (0.90..=0.99).contains(&r.ellipse_coverage) && r.empirical_correlation > 0.0 && gap <= 0.5,
                format!(
                    "ellipse coverage {:.3}, empirical correlation {:.3}, empirical cov [{:.3} {:.3} {:.3}], plug-in [{:.3} {:.3} {:.3}], largest relative gap {:.3}",
                    r.ellipse_coverage, r.empirical_correlation, e[0][0], e[0][1], e[1][1], p[0][0], p[0][1], p[1][1], gap
                ),
            )
        }
    }
}

fn criterion_4() -> Outcome {
    let run = |scope, n| {
        run_coverage_experiment(&CoverageConfig {
            base: simulation_base(n),
            scopes: vec![scope],
            k: 10,
            bootstrap: BootstrapConfig { draws: 1000, alpha: 0.05, seed: 99 },
            trials: 100,
            methods: vec![Method::Joint, Method::PerTaskBtl],
            estimator: joint_estimator(5),
        })
    };
    let (single, simul) = match (run(CoverageScope::SingleTask, 16_000), run(CoverageScope::Simultaneous, 32_000)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return (false, format!("experiment failed: {e}")),
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for method in [Method::Joint, Method::PerTaskBtl] {
        let s = single.row(method, CoverageScope::SingleTask).unwrap();
        let m = simul.row(method, CoverageScope::Simultaneous).unwrap();
        ok &= s.coverage.mean >= 0.93 && m.coverage.mean >= 0.93;
        parts.push(format!(
            "{method}: single coverage {:.3} width {:.1}, simultaneous coverage {:.3} resolved {:.3} width {:.1}",
            s.coverage.mean, s.width.mean, m.coverage.mean, m.resolved.mean, m.width.mean
        ));
    }
    let resolved = |method| simul.row(method, CoverageScope::Simultaneous).unwrap().resolved.mean;
    ok &= resolved(Method::Joint) > resolved(Method::PerTaskBtl);
    (ok, parts.join("; "))
}

fn criterion_5() -> Outcome {
    let mut rng = stream_rng(5, 0);
    let mut violations = 0;
    for _ in 0..1000 {
        let dt = rng.random_range(1..6);
        let dm = rng.random_range(3..12);
        let k = rng.random_range(1..dm);
        let eps = rng.random_range(0.0..1.5);
        let truth = recenter_rows(index(dt, dm), &(uniform(&mut rng, dt, dm) * 4.0));
        let est = recenter_rows(truth.index().clone(), &(truth.values() + uniform(&mut rng, dt, dm) * eps));
        let eps = (est.values() - truth.values()).amax();
        if !hamming_boundary_check(&est, &truth, k, eps).unwrap().iter().all(|&ok| ok) {
            violations += 1;
        }
    }
    (violations == 0, format!("{violations} violations in 1000 instances"))
}

fn flat(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

fn criterion_6() -> Outcome {
    let mut rng = stream_rng(6, 0);
    let mut worst: f64 = 0.0;

    // Tangent projector against the projector onto an explicit spanning set.
    let (dt, dm, r) = (4, 5, 2);
    let u = orthonormalize(&uniform(&mut rng, dt, r), &[]);
    let v = orthonormalize_against_ones(&uniform(&mut rng, dm, r));
    let basis = TangentBasis::new(u.clone(), v.clone()).unwrap();
    let cells = dt * dm;
    let mut p = DMatrix::zeros(cells, cells);
    for c in 0..cells {
        let mut e = DMatrix::zeros(dt, dm);
        e[(c / dm, c % dm)] = 1.0;
        p.set_column(c, &flat(&tangent_project(&e, &basis)));
    }
    let h = helmert_basis(dm);
    let mut span = Vec::new();
    for k in 0..r {
        for j in 0..dm - 1 {
            span.push(flat(&(u.column(k) * h.column(j).transpose())));
        }
        for t in 0..dt {
            let mut m = DMatrix::zeros(dt, dm);
            m.row_mut(t).copy_from(&v.column(k).transpose());
            span.push(flat(&m));
        }
    }
    let q = orthonormalize(&DMatrix::from_columns(&span), &[]);
    worst = worst.max((&p - &q * q.transpose()).amax());
    worst = worst.max((&p * &p - &p).amax());
    worst = worst.max((&p - p.transpose()).amax());

    // Pairwise Gram identity for a column-centered matrix.
    let raw = uniform(&mut rng, 6, 3);
    let theta = recenter_rows(index(3, 6), &raw.transpose()).into_values().transpose();
    let mut gram = DMatrix::zeros(3, 3);
    for a in 0..6 {
        for b in a + 1..6 {
            let d = (theta.row(a) - theta.row(b)).transpose();
            gram += &d * d.transpose();
        }
    }
    worst = worst.max((gram - theta.transpose() * &theta * 6.0).amax());

    // Frobenius reduction by exhaustive summation over (task, pair).
    let (dt, dm) = (3, 4);
    let hm = recenter_rows(index(dt, dm), &uniform(&mut rng, dt, dm)).into_values();
    let pairs = pair_count(dm);
    let mut mean = 0.0;
    for t in 0..dt {
        for k in 0..pairs {
            let (a, b) = pair_at(dm, k);
            let x = ComparisonRecord::new(t, a, b, true).eta(&hm);
            mean += x * x / (dt * pairs) as f64;
        }
    }
    worst = worst.max((mean - 2.0 * hm.norm_squared() / (dt as f64 * (dm as f64 - 1.0))).abs());

    // Recentering keeps every within-task difference.
    let m = uniform(&mut rng, 3, 4) * 3.0;
    let c = recenter_rows(index(3, 4), &m);
    for t in 0..3 {
        for a in 0..4 {
            for b in 0..4 {
                worst = worst.max((c.gap(t, a, b) - (m[(t, a)] - m[(t, b)])).abs());
            }
        }
    }
    (worst <= 1e-10, format!("largest identity residual {worst:.2e} (want ≤ 1e-10)"))
}

fn criterion_7() -> Outcome {
    // Convex fit without penalty on 2 tasks × 2 models: the gap is the logit
    // of the empirical win rate.
    let mut records = vec![ComparisonRecord::new(0, 0, 1, true); 7];
    records.extend(vec![ComparisonRecord::new(0, 0, 1, false); 3]);
    records.extend(vec![ComparisonRecord::new(1, 0, 1, true); 4]);
    records.extend(vec![ComparisonRecord::new(1, 0, 1, false); 6]);
    let data = ComparisonDataset::new(index(2, 2), records).unwrap();
    let config =
        ConvexConfig { lambda: Some(0.0), bound: f64::INFINITY, rank: 1, tol: 1e-15, max_iter: 50_000, ..Default::default() };
    let fit = fit_convex(&data, &config).unwrap();
    let mle_err = (fit.scores.gap(0, 0, 1) - (7.0f64 / 3.0).ln()).abs().max((fit.scores.gap(1, 0, 1) - (4.0f64 / 6.0).ln()).abs());

    // Conjugate gradients against a dense solve at 3 × 4.
    let (dt, dm) = (3, 4);
    let exhaustive: Vec<ComparisonRecord> = (0..dt)
        .flat_map(|t| (0..pair_count(dm)).map(move |k| (t, k)))
        .map(|(t, k)| {
            let (a, b) = pair_at(dm, k);
            ComparisonRecord::new(t, a, b, (t + k) % 2 == 0)
        })
        .collect();
    let mut rng = stream_rng(7, 0);
    let theta = recenter_rows(index(dt, dm), &(uniform(&mut rng, dt, 1) * uniform(&mut rng, 1, dm)));
    let basis = TangentBasis::from_scores(&theta, 1).unwrap();
    let fisher = FisherOperator::new(&exhaustive, &theta).unwrap();
    let options = CgOptions::default();
    let mut cg_err: f64 = 0.0;
    for (t, a, b) in [(0, 0, 1), (2, 3, 1), (1, 2, 0)] {
        let gamma = ContrastSpec::gap(t, a, b);
        let cg = solve_efficient_direction(&gamma, &basis, &fisher, &options).unwrap();
        let dense = solve_efficient_direction_dense(&gamma, &basis, &fisher, &options).unwrap();
        cg_err = cg_err.max((cg - dense).amax());
    }

    // Loss gradient against central differences.
    let truth = recenter_rows(index(4, 5), &uniform(&mut rng, 4, 5));
    let sample = sample_comparisons(&truth, &SamplingDesign::uniform(truth.index()), 200, 1.0, 8).unwrap();
    let point = uniform(&mut rng, 4, 5);
    let grad = loss_gradient(sample.records(), &point);
    let h = 1e-5;
    let mut fd_err: f64 = 0.0;
    for t in 0..4 {
        for m in 0..5 {
            let (mut plus, mut minus) = (point.clone(), point.clone());
            plus[(t, m)] += h;
            minus[(t, m)] -= h;
            let fd = (mean_loss(sample.records(), &plus) - mean_loss(sample.records(), &minus)) / (2.0 * h);
            fd_err = fd_err.max((fd - grad[(t, m)]).abs());
        }
    }
    (
        mle_err <= 1e-4 && cg_err <= 1e-6 && fd_err <= 1e-6,
        format!("unpenalized fit vs logit {mle_err:.1e}, CG vs dense {cg_err:.1e}, gradient vs differences {fd_err:.1e}"),
    )
}

fn criterion_8() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/arena_5k.csv");
    let run = || -> taskrank::Result<Vec<(f64, f64, usize)>> {
        let votes = parse_votes(&path, VoteFormat::Csv)?;
        let built = build_dataset(&votes.votes, &BuildOptions { top_k_models: 12, ..Default::default() })?;
        let estimator = joint_estimator(3);
        let dm = built.dataset.index().model_count();
        let targets: Vec<(Scope, usize)> = (0..dm).map(|m| (Scope::AllTasks, m)).collect();
        let mut out = Vec::new();
        for f in [0.2, 1.0] {
            let data = subsample(&built.dataset, f, 11)?;
            estimator.fit(&data)?;
            let map = estimator.influence_map(&data)?;
            let reports = certify_models(map.as_ref(), &targets, 3, &BootstrapConfig { seed: 12, ..Default::default() })?;
            let widths: Vec<usize> = reports.iter().flat_map(|r| r.rank_bands.iter().map(|b| b.width())).collect();
            out.push((f, widths.iter().sum::<usize>() as f64 / widths.len() as f64, data.len()));
        }
        Ok(out)
    };
    match run() {
        Err(e) => (false, format!("pipeline failed: {e}")),
        Ok(w) => (
            w[0].1 > w[1].1,
            format!("mean rank-CI width {:.2} at f=0.2 (n={}) vs {:.2} at f=1.0 (n={})", w[0].1, w[0].2, w[1].1, w[1].2),
        ),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let (c1, c2) = sweep_criteria();
    let mut results = vec![("1 sup-norm error decay", c1), ("2 joint beats per-task Hamming", c2)];
    let later: [Check; 6] = [
        ("3 joint Gaussianity of two contrasts", criterion_3),
        ("4 rank-band coverage", criterion_4),
        ("5 Hamming boundary implication", criterion_5),
        ("6 algebraic identities", criterion_6),
        ("7 solver oracles", criterion_7),
        ("8 arena pipeline", criterion_8),
    ];
    for (name, check) in later {
        results.push((name, check()));
    }
    let mut failed = 0;
    for (name, (ok, detail)) in &results {
        println!("{} criterion {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("{} of {} criteria passed in {:.0}s", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
