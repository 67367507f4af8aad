//! Structural selection on the tuning split.
//!
//! For each candidate, the smallest grid threshold whose empirical
//! miscoverage on the tuning split stays within the target level is found by
//! a monotone line search; the candidate with the smallest average set size
//! at its feasible threshold wins (ties broken by P95 size, then threshold,
//! then id). Only the selected structure is carried forward: the deployed
//! threshold is recomputed on the calibration split.

use serde::{Deserialize, Serialize};

use crate::alpha::Alpha;
use crate::error::{Error, Result};
use crate::scores::{fit_candidate, Candidate, DataView, ScoreModel};
use crate::stats::percentile;

/// How the threshold grid is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridPolicy {
    /// Empirical quantiles of the tuning-split scores, equally spaced in
    /// probability from `0.5/count` to `1 - 0.5/count`, plus the maximum
    /// tuning score.
    TuneQuantiles { count: usize },
    /// Caller-provided grid values.
    Explicit { values: Vec<f64> },
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy::TuneQuantiles { count: 80 }
    }
}

impl GridPolicy {
    pub fn build(&self, tune_scores: &[f64]) -> Result<ThresholdGrid> {
        match self {
            GridPolicy::TuneQuantiles { count } => {
                if *count == 0 || tune_scores.is_empty() {
                    return Err(Error::EmptyGrid);
                }
                let mut values = Vec::with_capacity(count + 1);
                for i in 0..*count {
                    let p = (i as f64 + 0.5) / *count as f64;
                    values.push(percentile(tune_scores, p)?);
                }
                values.push(
                    tune_scores
                        .iter()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max),
                );
                ThresholdGrid::new(values, GridSource::QuantileOfTune)
            }
            GridPolicy::Explicit { values } => {
                ThresholdGrid::new(values.clone(), GridSource::Explicit)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSource {
    QuantileOfTune,
    Explicit,
}

/// Strictly increasing, non-empty vector of candidate thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    values: Vec<f64>,
    source: GridSource,
}

impl ThresholdGrid {
    pub fn new(mut values: Vec<f64>, source: GridSource) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("grid values must be finite".into()));
        }
        values.sort_unstable_by(f64::total_cmp);
        values.dedup();
        if values.is_empty() {
            return Err(Error::EmptyGrid);
        }
        Ok(ThresholdGrid { values, source })
    }

    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        Self::new(values, GridSource::Explicit)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("grid non-empty")
    }

    pub fn source(&self) -> GridSource {
        self.source
    }
}

/// Tuning options: grid construction and the feasibility rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    #[serde(default)]
    pub grid: GridPolicy,
    /// Constraint tightening: candidates must satisfy
    /// `emp_risk <= alpha - epsilon_r`. Zero keeps the plain constraint,
    /// evaluated exactly for rational alphas.
    #[serde(default)]
    pub epsilon_r: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            grid: GridPolicy::default(),
            epsilon_r: 0.0,
        }
    }
}

impl TuneConfig {
    fn admits(&self, miscovered: usize, n: usize, alpha: Alpha) -> bool {
        if self.epsilon_r == 0.0 {
            alpha.admits(miscovered, n)
        } else {
            miscovered as f64 / n as f64 <= alpha.value() - self.epsilon_r
        }
    }
}

/// Fraction of tuning pairs whose score exceeds `lambda`; non-increasing in
/// `lambda`.
pub fn empirical_risk(model: &ScoreModel, tune: &DataView<'_>, lambda: f64) -> Result<f64> {
    if tune.is_empty() {
        return Err(Error::EmptySet("tune"));
    }
    let scores = tune.true_scores(model);
    Ok(scores.iter().filter(|&&s| s > lambda).count() as f64 / scores.len() as f64)
}

/// Mean set size over the tuning inputs; non-decreasing in `lambda`.
pub fn empirical_size(model: &ScoreModel, tune: &DataView<'_>, lambda: f64) -> Result<f64> {
    if tune.is_empty() {
        return Err(Error::EmptySet("tune"));
    }
    let sizes = tune.set_sizes(model, lambda);
    Ok(sizes.iter().sum::<f64>() / sizes.len() as f64)
}

/// Miscoverage count above `lambda` on sorted scores.
fn count_above(sorted_scores: &[f64], lambda: f64) -> usize {
    sorted_scores.len() - sorted_scores.partition_point(|&s| s <= lambda)
}

/// Smallest grid index whose threshold is feasible, by binary search over the
/// monotone feasibility predicate.
fn min_feasible_index(
    sorted_scores: &[f64],
    grid: &ThresholdGrid,
    alpha: Alpha,
    cfg: &TuneConfig,
) -> Option<usize> {
    let n = sorted_scores.len();
    let feasible =
        |idx: usize| cfg.admits(count_above(sorted_scores, grid.values()[idx]), n, alpha);
    let (mut lo, mut hi) = (0usize, grid.len());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    (lo < grid.len()).then_some(lo)
}

/// Smallest grid threshold with empirical risk at most `alpha`, or `None`
/// when even the largest grid value is infeasible.
pub fn min_feasible_lambda(
    model: &ScoreModel,
    tune: &DataView<'_>,
    alpha: Alpha,
    grid: &ThresholdGrid,
) -> Result<Option<f64>> {
    if tune.is_empty() {
        return Err(Error::EmptySet("tune"));
    }
    let mut scores = tune.true_scores(model);
    scores.sort_unstable_by(f64::total_cmp);
    let cfg = TuneConfig::default();
    Ok(min_feasible_index(&scores, grid, alpha, &cfg).map(|i| grid.values()[i]))
}

/// Per-candidate tuning outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub candidate: Candidate,
    /// Smallest feasible threshold; absent when no grid value is feasible.
    pub lambda_min: Option<f64>,
    /// Threshold at which the row statistics were computed: `lambda_min` when
    /// feasible, the largest grid value otherwise.
    pub eval_lambda: f64,
    pub emp_risk: f64,
    pub emp_size: f64,
    pub p95_size: f64,
    pub feasible: bool,
}

/// Result of the structural search on the tuning split.
///
/// `lambda_tune` ranks candidates only; it is discarded before deployment and
/// the deployed threshold is recomputed on the calibration split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub selected: Candidate,
    pub lambda_tune: f64,
    pub table: Vec<CandidateRow>,
    pub fallback_used: bool,
}

/// Index of the winning row plus whether the infeasible fallback fired.
///
/// Feasible rows are ranked by average size, then P95 size, then smaller
/// threshold, then id; with no feasible row the candidate with the smallest
/// empirical risk at the top of its grid wins, ties broken by smaller size,
/// then id.
pub fn select_candidate(rows: &[CandidateRow]) -> Result<(usize, bool)> {
    if rows.is_empty() {
        return Err(Error::EmptySet("candidate table"));
    }
    let feasible: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].feasible).collect();
    if feasible.is_empty() {
        let best = (0..rows.len())
            .min_by(|&i, &j| {
                rows[i]
                    .emp_risk
                    .total_cmp(&rows[j].emp_risk)
                    .then_with(|| rows[i].emp_size.total_cmp(&rows[j].emp_size))
                    .then_with(|| rows[i].candidate.id.cmp(&rows[j].candidate.id))
            })
            .expect("non-empty table");
        return Ok((best, true));
    }
    let best = feasible
        .into_iter()
        .min_by(|&i, &j| {
            rows[i]
                .emp_size
                .total_cmp(&rows[j].emp_size)
                .then_with(|| rows[i].p95_size.total_cmp(&rows[j].p95_size))
                .then_with(|| rows[i].eval_lambda.total_cmp(&rows[j].eval_lambda))
                .then_with(|| rows[i].candidate.id.cmp(&rows[j].candidate.id))
        })
        .expect("non-empty feasible set");
    Ok((best, false))
}

fn candidate_row(
    model: &ScoreModel,
    tune: &DataView<'_>,
    alpha: Alpha,
    cfg: &TuneConfig,
) -> Result<CandidateRow> {
    let mut scores = tune.true_scores(model);
    let grid = cfg.grid.build(&scores)?;
    scores.sort_unstable_by(f64::total_cmp);
    let n = scores.len();
    let feasible_idx = min_feasible_index(&scores, &grid, alpha, cfg);
    let eval_lambda = feasible_idx.map_or(grid.max(), |i| grid.values()[i]);
    let emp_risk = count_above(&scores, eval_lambda) as f64 / n as f64;
    let sizes = tune.set_sizes(model, eval_lambda);
    let emp_size = sizes.iter().sum::<f64>() / n as f64;
    let p95_size = percentile(&sizes, 0.95)?;
    Ok(CandidateRow {
        candidate: model.candidate().clone(),
        lambda_min: feasible_idx.map(|i| grid.values()[i]),
        eval_lambda,
        emp_risk,
        emp_size,
        p95_size,
        feasible: feasible_idx.is_some(),
    })
}

/// DCO-Warmstart structural selection: fit every candidate on the training
/// split, line-search its threshold on the tuning split, and pick the most
/// efficient feasible candidate.
pub fn dco_tune(
    train: &DataView<'_>,
    tune: &DataView<'_>,
    candidates: &[Candidate],
    alpha: Alpha,
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    if candidates.is_empty() {
        return Err(Error::EmptySet("candidate"));
    }
    if tune.is_empty() {
        return Err(Error::EmptySet("tune"));
    }
    let mut table = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let model = fit_candidate(train, cand)?;
        table.push(candidate_row(&model, tune, alpha, cfg)?);
    }
    let (winner, fallback_used) = select_candidate(&table)?;
    Ok(TuneResult {
        selected: table[winner].candidate.clone(),
        lambda_tune: table[winner].eval_lambda,
        table,
        fallback_used,
    })
}

/// Outcome of the direct-tuning diagnostic. The threshold comes straight from
/// the tuning split and is deployed as-is, so the result carries no conformal
/// guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectTuneResult {
    pub candidate: Candidate,
    pub lambda: f64,
    /// False when no grid value met the constraint and the largest grid value
    /// was returned instead.
    pub feasible: bool,
}

/// Direct threshold tuning for a fixed structure (no recalibration).
pub fn direct_tune(
    train: &DataView<'_>,
    tune: &DataView<'_>,
    fixed: &Candidate,
    alpha: Alpha,
    cfg: &TuneConfig,
) -> Result<DirectTuneResult> {
    if tune.is_empty() {
        return Err(Error::EmptySet("tune"));
    }
    let model = fit_candidate(train, fixed)?;
    let row = candidate_row(&model, tune, alpha, cfg)?;
    Ok(DirectTuneResult {
        candidate: fixed.clone(),
        lambda: row.eval_lambda,
        feasible: row.feasible,
    })
}

/// Ceiling with a snap guard against products that are integral up to
/// floating-point error.
fn ceil_snapped(x: f64) -> u64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

/// Tuning sample size for uniform control of empirical miscoverage (within
/// `eps_r`) and empirical size (within `eps_s`, sizes bounded by `b`) over a
/// class of `k` candidates, at failure probability `eta`:
/// `ceil(max(log(4k/eta) / (2 eps_r^2), b^2 log(4k/eta) / (2 eps_s^2)))`.
pub fn tuning_sample_size(eps_r: f64, eps_s: f64, eta: f64, k: usize, b: f64) -> Result<u64> {
    if [eps_r, eps_s, b]
        .iter()
        .any(|v| !v.is_finite() || *v <= 0.0)
        || k == 0
    {
        return Err(Error::InvalidConfig(
            "sample-size arguments must be positive".into(),
        ));
    }
    if !eta.is_finite() || eta <= 0.0 || eta >= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "eta must lie in (0, 1), got {eta}"
        )));
    }
    let log_term = (4.0 * k as f64 / eta).ln();
    let risk_branch = log_term / (2.0 * eps_r * eps_r);
    let size_branch = b * b * log_term / (2.0 * eps_s * eps_s);
    Ok(ceil_snapped(risk_branch.max(size_branch)))
}
