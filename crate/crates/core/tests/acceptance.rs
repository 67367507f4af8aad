//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (run with `--nocapture` to see them).
//!
//! Criterion 11 (byte-identical CLI reports) lives in the CLI crate's
//! acceptance test, next to the binary it exercises.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use dco_core::conformal::{conformal_quantile, CalibrationScores};
use dco_core::harness::{
    ablate_split_ratios, run_experiment, run_trial_audited, ExperimentConfig, Method, SplitRatios,
    TaskSource,
};
use dco_core::riskcontrol::{bq_threshold_for_scores, BqConfig};
use dco_core::scores::{regression_prior_scale_class, Targets};
use dco_core::seed::derive_seed;
use dco_core::stats::{check_quantile_concentration, regularized_incomplete_beta, UniformSampler};
use dco_core::tuning::{dco_tune, tuning_sample_size, GridPolicy, TuneConfig};
use dco_core::{Alpha, Candidate, SyntheticTask, TaskData, TaskKind};

fn pass(criterion: u32, detail: String) {
    println!("ACCEPTANCE {criterion:>2}: PASS  {detail}");
}

/// Sixteen regression candidates spanning shrinkage regimes.
fn regression16() -> Vec<Candidate> {
    regression_prior_scale_class(&[
        0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.45, 0.65, 1.0, 1.5, 2.2, 3.3, 5.0, 7.5, 11.0, 17.0,
    ])
}

/// Criterion 1: with a fixed candidate and continuous scores, mean coverage
/// over 2000 fresh-calibration trials equals k/(m+1) = 0.80 within 3 sigma,
/// in under 60 seconds.
#[test]
fn c01_exact_coverage_band() {
    let started = Instant::now();
    let alpha = Alpha::rational(1, 5).unwrap();
    let (m_cal, n_test, trials) = (99usize, 200usize, 2000usize);
    let task = SyntheticTask::regression(2, 1.0, 101).unwrap();
    let train = task.generate(150);
    let train_idx: Vec<usize> = (0..150).collect();
    let cand = Candidate::new("fixed", TaskKind::Regression).with_float("prior_scale", 1.0);
    let model = dco_core::fit_candidate(&train.view(&train_idx), &cand).unwrap();

    let coverages: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let fresh = task.generate_seeded(m_cal + n_test, derive_seed(900, trial as u64));
            let all: Vec<usize> = (0..fresh.len()).collect();
            let view = fresh.view(&all);
            let scores = view.true_scores(&model);
            let cal = CalibrationScores::new(scores[..m_cal].to_vec()).unwrap();
            let threshold = conformal_quantile(&cal, alpha);
            let covered = scores[m_cal..].iter().filter(|&&s| s <= threshold).count();
            covered as f64 / n_test as f64
        })
        .collect();
    let mean = coverages.iter().sum::<f64>() / trials as f64;
    let var = coverages
        .iter()
        .map(|c| (c - mean) * (c - mean))
        .sum::<f64>()
        / (trials - 1) as f64;
    let sigma = (var / trials as f64).sqrt();
    let target = 0.80;
    let elapsed = started.elapsed();
    assert!(
        (mean - target).abs() <= 3.0 * sigma,
        "mean coverage {mean:.5} outside 0.80 +- {:.5}",
        3.0 * sigma
    );
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    pass(
        1,
        format!(
            "mean coverage {mean:.5} vs 0.80, 3sigma {:.5}, {elapsed:?}",
            3.0 * sigma
        ),
    );
}

/// Criterion 2: m_cal = 4 with alpha = 0.1 hits the overflow branch in every
/// trial: infinite threshold, coverage exactly 1.
#[test]
fn c02_overflow_branch() {
    let alpha = Alpha::decimal(0.1).unwrap();
    let task = SyntheticTask::regression(1, 1.0, 7).unwrap();
    let train = task.generate(60);
    let train_idx: Vec<usize> = (0..60).collect();
    let cand = Candidate::new("fixed", TaskKind::Regression).with_float("prior_scale", 1.0);
    let model = dco_core::fit_candidate(&train.view(&train_idx), &cand).unwrap();
    for trial in 0..100u64 {
        let fresh = task.generate_seeded(54, derive_seed(901, trial));
        let all: Vec<usize> = (0..54).collect();
        let scores = fresh.view(&all).true_scores(&model);
        let cal = CalibrationScores::new(scores[..4].to_vec()).unwrap();
        let threshold = conformal_quantile(&cal, alpha);
        assert_eq!(threshold, f64::INFINITY, "trial {trial}");
        let covered = scores[4..].iter().filter(|&&s| s <= threshold).count();
        assert_eq!(covered, 50, "trial {trial}: coverage below 1");
    }
    pass(
        2,
        "100/100 trials: +inf threshold, coverage exactly 1".to_owned(),
    );
}

/// Criterion 3: the full pipeline with 16 candidates keeps mean coverage in
/// the exact band [0.80, 0.80 + 1/201]; direct tuning differs in mean and is
/// at least as variable per seed.
#[test]
fn c03_dco_pipeline_coverage() {
    let alpha = Alpha::rational(1, 5).unwrap();
    let n = 1200;
    let ratios = SplitRatios::new(
        300.0 / 1200.0,
        100.0 / 1200.0,
        200.0 / 1200.0,
        600.0 / 1200.0,
    )
    .unwrap();
    let task = SyntheticTask::regression(2, 1.0, 303).unwrap();
    // The plan must realise m_cal = 200 exactly for the stated band.
    let probe = dco_core::harness::make_splits_for(&task.generate(n), &ratios, 1).unwrap();
    assert_eq!(probe.cal.len(), 200);
    let source = TaskSource::Synthetic { task, n_samples: n };
    let cfg = ExperimentConfig::new(vec![Method::Dco, Method::Direct], 1000, ratios, 77);
    let report = run_experiment(&source, &regression16(), alpha, &cfg).unwrap();
    let dco = &report.methods[0];
    let direct = &report.methods[1];
    let sigma = dco.coverage.std / (report.n_seeds as f64).sqrt();
    let (lo, hi) = (0.80, 0.80 + 1.0 / 201.0);
    assert!(
        dco.coverage.mean >= lo - 3.0 * sigma && dco.coverage.mean <= hi + 3.0 * sigma,
        "dco mean coverage {:.5} outside [{lo:.5}, {hi:.5}] +- {:.5}",
        dco.coverage.mean,
        3.0 * sigma
    );
    assert_ne!(direct.coverage.mean, dco.coverage.mean);
    assert!(
        direct.coverage.std >= dco.coverage.std,
        "direct std {:.5} < dco std {:.5}",
        direct.coverage.std,
        dco.coverage.std
    );
    pass(
        3,
        format!(
            "dco {:.5} in [{lo:.5}, {hi:.5}]+-{:.5}; stds direct {:.4} >= dco {:.4}",
            dco.coverage.mean,
            3.0 * sigma,
            direct.coverage.std,
            dco.coverage.std
        ),
    );
}

/// Criterion 4: matched-budget risk control is conservative relative to DCO
/// in both coverage and size, with the size difference significant at 1%.
#[test]
fn c04_bq_conservative_direction() {
    let alpha = Alpha::rational(1, 5).unwrap();
    let ratios = SplitRatios::new(0.3, 0.2, 0.25, 0.25).unwrap();
    let task = SyntheticTask::regression(2, 1.0, 404).unwrap();
    let source = TaskSource::Synthetic {
        task,
        n_samples: 1200,
    };
    let cfg = ExperimentConfig::new(vec![Method::Dco, Method::BqFixed], 200, ratios, 88);
    let report = run_experiment(
        &source,
        &dco_core::scores::default_regression_class(),
        alpha,
        &cfg,
    )
    .unwrap();
    let dco = &report.methods[0];
    let bq = &report.methods[1];
    assert!(
        bq.coverage.mean >= dco.coverage.mean,
        "bq not conservative in coverage"
    );
    let (dco_size, bq_size) = (dco.avg_size.unwrap(), bq.avg_size.unwrap());
    assert!(bq_size.mean >= dco_size.mean, "bq not conservative in size");
    let size_test = report
        .wilcoxon
        .iter()
        .find(|w| {
            w.method_a == Method::Dco && w.method_b == Method::BqFixed && w.metric == "avg_size"
        })
        .expect("size comparison present");
    assert!(
        size_test.p_value < 0.01,
        "size p-value {:.3e}",
        size_test.p_value
    );
    pass(
        4,
        format!(
            "coverage {:.4} <= {:.4}, size {:.4} <= {:.4}, size p {:.2e}",
            dco.coverage.mean, bq.coverage.mean, dco_size.mean, bq_size.mean, size_test.p_value
        ),
    );
}

/// Criterion 5: Dirichlet-MC feasibility matches the analytic Beta CDF for
/// binary losses with j of m=100 miscoverages, within 3 sigma at M=1000.
#[test]
fn c05_bq_analytic_oracle() {
    let m = 100usize;
    let draws = 1000usize;
    let scores: Vec<f64> = (1..=m).map(|i| i as f64).collect();
    // Grid thresholds inducing exactly j = 20, 5, 1, 0 miscoverages.
    let cases = [(80.5, 20usize), (95.5, 5), (99.5, 1), (100.5, 0)];
    let grid = dco_core::tuning::ThresholdGrid::explicit(
        cases.iter().map(|(lambda, _)| *lambda).collect(),
    )
    .unwrap();
    let mut checked = 0;
    for alpha in [0.1, 0.2] {
        let cfg = BqConfig {
            rng_seed: derive_seed(905, (alpha * 10.0) as u64),
            mc_draws_m: draws,
            record_full_curve: true,
            ..BqConfig::default()
        };
        let diag =
            bq_threshold_for_scores(&scores, &grid, Alpha::decimal(alpha).unwrap(), &cfg).unwrap();
        for (lambda, j) in cases {
            let expected =
                regularized_incomplete_beta(alpha, (j + 1) as f64, (m - j) as f64).unwrap();
            let got = diag
                .per_lambda_probs
                .iter()
                .find(|(l, _)| *l == lambda)
                .expect("full curve recorded")
                .1;
            let tol = 3.0 * (expected * (1.0 - expected) / draws as f64).sqrt();
            assert!(
                (got - expected).abs() <= tol,
                "alpha={alpha} j={j}: got {got:.6}, expected {expected:.6}, tol {tol:.6}"
            );
            checked += 1;
        }
    }
    pass(
        5,
        format!("{checked}/8 feasibility probabilities within 3 sigma of I_alpha(j+1, m-j)"),
    );
}

/// Criterion 6: the gap between the risk-control threshold and the conformal
/// quantile of the same pool shrinks with the pool: medians strictly decrease
/// over sizes {100, 1000, 10000} and the last is under half the first.
#[test]
fn c06_asymptotic_agreement() {
    let alpha = Alpha::rational(1, 5).unwrap();
    let task = SyntheticTask::regression(1, 1.0, 606).unwrap();
    let train = task.generate(200);
    let train_idx: Vec<usize> = (0..200).collect();
    let cand = Candidate::new("fixed", TaskKind::Regression).with_float("prior_scale", 1.0);
    let model = dco_core::fit_candidate(&train.view(&train_idx), &cand).unwrap();

    let mut medians = Vec::new();
    for (k, &pool_size) in [100usize, 1000, 10_000].iter().enumerate() {
        let mut gaps: Vec<f64> = (0..50u64)
            .into_par_iter()
            .map(|seed| {
                let pool = task.generate_seeded(pool_size, derive_seed(906 + k as u64, seed));
                let all: Vec<usize> = (0..pool_size).collect();
                let scores = pool.view(&all).true_scores(&model);
                let grid = GridPolicy::default().build(&scores).unwrap();
                let cfg = BqConfig {
                    rng_seed: derive_seed(916 + k as u64, seed),
                    ..BqConfig::default()
                };
                let diag = bq_threshold_for_scores(&scores, &grid, alpha, &cfg).unwrap();
                let q = conformal_quantile(&CalibrationScores::new(scores).unwrap(), alpha);
                (diag.selected_lambda - q).abs()
            })
            .collect();
        gaps.sort_unstable_by(f64::total_cmp);
        medians.push((gaps[24] + gaps[25]) / 2.0);
    }
    assert!(
        medians[0] > medians[1] && medians[1] > medians[2],
        "medians not strictly decreasing: {medians:?}"
    );
    assert!(
        medians[2] < 0.5 * medians[0],
        "gap at 1e4 ({:.5}) not below half the gap at 1e2 ({:.5})",
        medians[2],
        medians[0]
    );
    pass(6, format!("median |lambda_bq - q_hat| = {medians:?}"));
}

/// Criterion 7: with the tightened constraint and the prescribed tuning
/// sample size, the selected rule's population risk stays within alpha in at
/// least a (1 - eta) fraction of repeats, minus binomial slack.
#[test]
fn c07_tuning_oracle_inequality() {
    let alpha = Alpha::rational(1, 5).unwrap();
    let (eps_r, eta, k_class) = (0.05f64, 0.1f64, 8usize);
    // Interval rules [-w, w] for Y ~ N(0,1): population risks 0.05..0.75 in
    // steps of 0.1 = 2 eps_r, sizes 2w bounded by 4.
    let normal = Normal::new(0.0, 1.0).unwrap();
    let risks: Vec<f64> = (0..k_class).map(|a| 0.05 + 0.1 * a as f64).collect();
    let widths: Vec<f64> = risks
        .iter()
        .map(|r| normal.inverse_cdf(1.0 - r / 2.0))
        .collect();
    let loss_bound = 4.0;
    assert!(widths.iter().all(|w| 2.0 * w <= loss_bound));
    let m_tune = tuning_sample_size(eps_r, 0.2, eta, k_class, loss_bound).unwrap() as usize;

    let grid_values: Vec<f64> = {
        let mut v = widths.clone();
        v.sort_unstable_by(f64::total_cmp);
        v
    };
    let cfg = TuneConfig {
        grid: GridPolicy::Explicit {
            values: grid_values,
        },
        epsilon_r: eps_r,
    };
    let single = vec![Candidate::new("abs", TaskKind::Precomputed)];
    let successes: usize = (0..200u64)
        .into_par_iter()
        .map(|repeat| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(907, repeat));
            // Scores |Y| as a one-class precomputed table; the set at
            // threshold w is exactly the interval [-w, w].
            let table: Vec<Vec<f64>> = (0..m_tune)
                .map(|_| vec![rng.sample::<f64, _>(StandardNormal).abs()])
                .collect();
            let data = TaskData {
                kind: TaskKind::Precomputed,
                features: Vec::new(),
                targets: Targets::Labels(vec![0; m_tune]),
                class_count: 1,
                noise_scale: None,
                origin_seed: 0,
                tables: BTreeMap::from([("abs".to_owned(), Arc::new(table))]),
            };
            let all: Vec<usize> = (0..m_tune).collect();
            let view = data.view(&all);
            let tuned = dco_tune(&view, &view, &single, alpha, &cfg).unwrap();
            let population_risk = if tuned.fallback_used {
                1.0
            } else {
                2.0 * (1.0 - normal.cdf(tuned.lambda_tune))
            };
            usize::from(population_risk <= alpha.value())
        })
        .sum();
    let rate = successes as f64 / 200.0;
    let floor = (1.0 - eta) - 3.0 * ((1.0 - eta) * eta / 200.0f64).sqrt();
    assert!(
        rate >= floor,
        "success rate {rate:.4} below {floor:.4} (m_tune={m_tune})"
    );
    pass(
        7,
        format!(
            "population risk <= alpha in {rate:.3} of repeats (floor {floor:.3}, m_tune {m_tune})"
        ),
    );
}

/// Criterion 8: DKW quantile concentration at (alpha=0.1, m=1000, t=0.05,
/// c=1) over 10,000 trials.
#[test]
fn c08_quantile_concentration() {
    let check = check_quantile_concentration(
        &UniformSampler,
        Alpha::decimal(0.1).unwrap(),
        1000,
        0.05,
        1.0,
        10_000,
        908,
    )
    .unwrap();
    assert!(!check.vacuous);
    assert!(
        (check.bound - 0.0199).abs() < 3e-4,
        "bound {:.6} far from the stated 0.0199",
        check.bound
    );
    assert!(
        check.passed,
        "observed {:.6} above bound {:.6}",
        check.observed_rate, check.bound
    );
    pass(
        8,
        format!(
            "observed exceedance {:.5} <= bound {:.5} + slack",
            check.observed_rate, check.bound
        ),
    );
}

/// Independent exact signed-rank oracle: pairwise-counted average ranks and
/// a full enumeration of the 2^n sign assignments.
fn brute_force_wilcoxon(a: &[f64], b: &[f64]) -> f64 {
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return 1.0;
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&v| {
            let less = abs.iter().filter(|&&u| u < v).count() as f64;
            let equal = abs.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let w_obs: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let total = 1u64 << n;
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0..total {
        let w: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        if w <= w_obs + 1e-9 {
            le += 1;
        }
        if w >= w_obs - 1e-9 {
            ge += 1;
        }
    }
    (2.0 * (le.min(ge) as f64) / total as f64).min(1.0)
}

/// Criterion 9: the exact Wilcoxon enumeration matches an independent 2^n
/// oracle on 50 random instances, and the normal approximation stays within
/// 0.02 of exact at n = 12.
#[test]
fn c09_wilcoxon_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut max_gap = 0.0f64;
    for instance in 0..50 {
        let n = 12usize;
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 0.8).collect();
        let pairs = dco_core::stats::PairedSamples::new(a.clone(), b.clone()).unwrap();
        let exact =
            dco_core::stats::wilcoxon_signed_rank(&pairs, dco_core::stats::WilcoxonMode::Exact);
        let oracle = brute_force_wilcoxon(&a, &b);
        assert!(
            (exact.p_value - oracle).abs() < 1e-12,
            "instance {instance}: exact {:.12} vs oracle {oracle:.12}",
            exact.p_value
        );
        let approx = dco_core::stats::wilcoxon_signed_rank(
            &pairs,
            dco_core::stats::WilcoxonMode::NormalApprox,
        );
        let gap = (approx.p_value - exact.p_value).abs();
        max_gap = max_gap.max(gap);
        assert!(
            gap <= 0.02,
            "instance {instance}: |approx - exact| = {gap:.4}"
        );
    }
    pass(
        9,
        format!("50/50 instances match the 2^n oracle; max |approx - exact| {max_gap:.4}"),
    );
}

/// Candidates whose score quality degrades along a jitter ladder: one clear
/// winner, near rivals, and a graded tail, so tuning-split noise genuinely
/// drives selection instability at small `m_tune`.
fn jitter_ladder_class() -> Vec<Candidate> {
    [0.05, 1.3, 1.7, 2.3, 3.0, 4.0]
        .iter()
        .enumerate()
        .map(|(i, &jitter)| {
            Candidate::new(format!("cand_{:03}", i + 1), TaskKind::Classification)
                .with_text("score_variant", "posterior_nll")
                .with_float("jitter", jitter)
                .with_float("temperature", 1.0)
        })
        .collect()
}

/// Criterion 10: over a fixed non-training budget on a fixed pool with
/// random splits, shrinking the calibration split inflates the P95
/// variability, and a larger tuning split stabilises candidate selection.
#[test]
fn c10_split_ratio_ablation_trend() {
    let alpha = Alpha::rational(1, 5).unwrap();
    let ratios = SplitRatios::new(0.3, 0.25, 0.25, 0.2).unwrap();
    let task = SyntheticTask::classification(3, 6, 2.2, 1010).unwrap();
    let source = TaskSource::Synthetic {
        task,
        n_samples: 1400,
    };
    let mut cfg = ExperimentConfig::new(vec![Method::Dco], 200, ratios, 1111);
    // One fixed dataset, repeated random splits.
    cfg.resample_per_seed = false;
    let shares = [(20, 80), (33, 67), (50, 50), (67, 33), (80, 20)];
    let reports =
        ablate_split_ratios(&source, &jitter_ladder_class(), alpha, &shares, &cfg).unwrap();
    let p95_std: Vec<f64> = reports
        .iter()
        .map(|r| r.report.methods[0].p95_size.unwrap().std)
        .collect();
    let stability: Vec<f64> = reports
        .iter()
        .map(|r| r.report.stability.expect("dco selects"))
        .collect();
    assert!(
        p95_std[4] > p95_std[0],
        "p95 std at 80/20 ({:.4}) not above 20/80 ({:.4})",
        p95_std[4],
        p95_std[0]
    );
    assert!(
        stability[1] >= stability[0],
        "stability at 33/67 ({:.3}) below 20/80 ({:.3})",
        stability[1],
        stability[0]
    );
    pass(
        10,
        format!("p95 std 20/80..80/20 = {p95_std:?}; stability = {stability:?}"),
    );
}

/// Criterion 12: across 100 audited trials the tuning stage reads no
/// calibration or test index.
#[test]
fn c12_data_hygiene() {
    let alpha = Alpha::rational(1, 5).unwrap();
    let ratios = SplitRatios::new(0.3, 0.2, 0.25, 0.25).unwrap();
    let task = SyntheticTask::regression(2, 1.0, 1212).unwrap();
    let candidates = regression16();
    let cfg = dco_core::harness::TrialConfig::default();
    for trial in 0..100u64 {
        let data = task.generate_seeded(400, derive_seed(912, trial));
        let plan =
            dco_core::harness::make_splits_for(&data, &ratios, derive_seed(913, trial)).unwrap();
        let (_, reads) =
            run_trial_audited(&data, &candidates, alpha, Method::Dco, &plan, &cfg).unwrap();
        assert!(
            !reads.is_empty(),
            "trial {trial}: tuning stage read nothing"
        );
        let allowed: std::collections::BTreeSet<usize> =
            plan.train.iter().chain(&plan.tune).copied().collect();
        assert!(
            reads.is_subset(&allowed),
            "trial {trial}: tuning read outside train+tune"
        );
        for banned in plan.cal.iter().chain(&plan.test) {
            assert!(
                !reads.contains(banned),
                "trial {trial}: tuning read index {banned}"
            );
        }
    }
    pass(
        12,
        "100/100 trials: tuning reads disjoint from cal and test".to_owned(),
    );
}
