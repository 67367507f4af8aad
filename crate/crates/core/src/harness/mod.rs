//! Repeated-split experiment harness.
//!
//! Runs matched-budget comparisons of DCO-Warmstart, direct tuning, the
//! Dirichlet-MC risk-control baseline, and plain split conformal prediction,
//! pairing every method on the same split plan within a seed. Trials are
//! independent jobs over a bounded worker pool; aggregation folds results in
//! seed order, so reports are byte-identical across runs.

mod report;
mod splits;

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{
    write_per_seed_csv, ExperimentReport, LabeledReport, MeanStd, MethodSummary, SeedRecord,
    WilcoxonComparison,
};
pub use splits::{make_splits, make_splits_for, make_splits_stratified, SplitPlan, SplitRatios};

use crate::alpha::Alpha;
use crate::conformal::calibrate;
use crate::error::{Error, Result};
use crate::riskcontrol::{bq_calibrate, BqConfig, BqDiagnostics};
use crate::scores::{
    fit_candidate, Candidate, DataView, ReadLog, ScoreModel, SyntheticTask, TaskData,
};
use crate::seed::derive_seed;
use crate::stats::percentile;
use crate::tuning::{dco_tune, direct_tune, GridPolicy, TuneConfig};

/// Calibration method of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Tune structure on the tuning split, recalibrate on the calibration split.
    Dco,
    /// Deploy the tuning-split threshold directly (uncertified diagnostic).
    Direct,
    /// Dirichlet-MC risk control with a fixed structure on the matched pool.
    BqFixed,
    /// Per-candidate risk control on the pool, then size-minimal selection.
    BqMatchedPhi,
    /// DCO-selected structure recalibrated by risk control on the pool.
    BqRecalibrateDco,
    /// Fixed structure, conformal quantile on the calibration split only.
    SplitCp,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Dco => "dco",
            Method::Direct => "direct",
            Method::BqFixed => "bq_fixed",
            Method::BqMatchedPhi => "bq_matched_phi",
            Method::BqRecalibrateDco => "bq_recalibrate_dco",
            Method::SplitCp => "split_cp",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "dco" => Ok(Method::Dco),
            "direct" => Ok(Method::Direct),
            "bq_fixed" => Ok(Method::BqFixed),
            "bq_matched_phi" => Ok(Method::BqMatchedPhi),
            "bq_recalibrate_dco" => Ok(Method::BqRecalibrateDco),
            "split_cp" => Ok(Method::SplitCp),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }

    /// Whether the deployed rule carries a formal guarantee.
    pub fn certified(&self) -> bool {
        !matches!(self, Method::Direct)
    }

    /// Whether the method runs the tuning-stage candidate search.
    pub fn selects_candidate(&self) -> bool {
        matches!(
            self,
            Method::Dco | Method::BqMatchedPhi | Method::BqRecalibrateDco
        )
    }
}

/// Threshold progression of a single trial (single-seed trace schema).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdTrace {
    #[serde(with = "crate::conformal::threshold_serde::opt", default)]
    pub lambda_tune: Option<f64>,
    #[serde(with = "crate::conformal::threshold_serde::opt", default)]
    pub q_cal: Option<f64>,
    #[serde(with = "crate::conformal::threshold_serde::opt", default)]
    pub lambda_bq: Option<f64>,
    pub p_bq: Option<f64>,
}

/// Per-trial evaluation on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub method: Method,
    pub coverage: f64,
    #[serde(with = "crate::conformal::threshold_serde")]
    pub avg_size: f64,
    #[serde(with = "crate::conformal::threshold_serde")]
    pub p95_size: f64,
    #[serde(with = "crate::conformal::threshold_serde")]
    pub threshold: f64,
    pub selected_candidate: String,
    pub certified: bool,
    pub fallback_used: bool,
    /// The deployed threshold was `+inf` (overflow branch); regression width
    /// means exclude such trials, with the exclusion counted in the report.
    pub infinite_threshold: bool,
    #[serde(default)]
    pub trace: ThresholdTrace,
}

/// Per-trial knobs shared across seeds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub tune: TuneConfig,
    pub bq: BqConfig,
    /// Fixed structure for `direct`, `bq_fixed` and `split_cp`; defaults to
    /// the first candidate.
    pub fixed_candidate: Option<String>,
}

impl TrialConfig {
    fn fixed<'a>(&self, candidates: &'a [Candidate]) -> Result<&'a Candidate> {
        match &self.fixed_candidate {
            None => candidates.first().ok_or(Error::EmptySet("candidate")),
            Some(id) => candidates.iter().find(|c| &c.id == id).ok_or_else(|| {
                Error::InvalidConfig(format!("fixed candidate {id:?} not in class"))
            }),
        }
    }
}

fn evaluate(model: &ScoreModel, threshold: f64, test: &DataView<'_>) -> Result<(f64, f64, f64)> {
    if test.is_empty() {
        return Err(Error::EmptySet("test"));
    }
    let n = test.len();
    let mut covered = 0usize;
    for pos in 0..n {
        let (x, y) = test.pair(pos);
        if model.score(x, y) <= threshold {
            covered += 1;
        }
    }
    let sizes = test.set_sizes(model, threshold);
    let avg = sizes.iter().sum::<f64>() / n as f64;
    let p95 = percentile(&sizes, 0.95)?;
    Ok((covered as f64 / n as f64, avg, p95))
}

fn metrics(
    method: Method,
    model: &ScoreModel,
    threshold: f64,
    test: &DataView<'_>,
    fallback_used: bool,
    trace: ThresholdTrace,
) -> Result<TrialMetrics> {
    let (coverage, avg_size, p95_size) = evaluate(model, threshold, test)?;
    Ok(TrialMetrics {
        method,
        coverage,
        avg_size,
        p95_size,
        threshold,
        selected_candidate: model.candidate().id.clone(),
        certified: method.certified(),
        fallback_used,
        infinite_threshold: threshold == f64::INFINITY,
        trace,
    })
}

/// Pool grid built by the configured policy from the pool scores.
fn pool_grid(policy: &GridPolicy, scores: &[f64]) -> Result<crate::tuning::ThresholdGrid> {
    policy.build(scores)
}

fn run_trial_inner(
    data: &TaskData,
    candidates: &[Candidate],
    alpha: Alpha,
    method: Method,
    plan: &SplitPlan,
    cfg: &TrialConfig,
    tuning_log: Option<&ReadLog>,
) -> Result<TrialMetrics> {
    if candidates.is_empty() {
        return Err(Error::EmptySet("candidate"));
    }
    let train = data.view(&plan.train);
    let tune = data.view(&plan.tune);
    let cal = data.view(&plan.cal);
    let test = data.view(&plan.test);
    let pool_indices = plan.pool();
    let pool = data.view(&pool_indices);
    // Every Dirichlet draw matrix is re-seeded per split plan.
    let bq_cfg = cfg
        .bq
        .clone()
        .with_seed(derive_seed(cfg.bq.rng_seed, plan.seed));

    // The tuning stage only ever receives these views; when auditing, every
    // raw index it reads lands in the log.
    let audited_train = tuning_log.map_or(train, |log| data.audited_view(&plan.train, log));
    let audited_tune = tuning_log.map_or(tune, |log| data.audited_view(&plan.tune, log));

    match method {
        Method::Dco => {
            let tuned = dco_tune(&audited_train, &audited_tune, candidates, alpha, &cfg.tune)?;
            let model = fit_candidate(&train, &tuned.selected)?;
            let rule = calibrate(&model, &cal, alpha)?;
            let trace = ThresholdTrace {
                lambda_tune: Some(tuned.lambda_tune),
                q_cal: Some(rule.threshold),
                ..Default::default()
            };
            metrics(
                method,
                &model,
                rule.threshold,
                &test,
                tuned.fallback_used,
                trace,
            )
        }
        Method::Direct => {
            let fixed = cfg.fixed(candidates)?;
            let tuned = direct_tune(&audited_train, &audited_tune, fixed, alpha, &cfg.tune)?;
            let model = fit_candidate(&train, fixed)?;
            let trace = ThresholdTrace {
                lambda_tune: Some(tuned.lambda),
                ..Default::default()
            };
            metrics(method, &model, tuned.lambda, &test, !tuned.feasible, trace)
        }
        Method::SplitCp => {
            let fixed = cfg.fixed(candidates)?;
            let model = fit_candidate(&train, fixed)?;
            let rule = calibrate(&model, &cal, alpha)?;
            let trace = ThresholdTrace {
                q_cal: Some(rule.threshold),
                ..Default::default()
            };
            metrics(method, &model, rule.threshold, &test, false, trace)
        }
        Method::BqFixed => {
            let fixed = cfg.fixed(candidates)?;
            let model = fit_candidate(&train, fixed)?;
            let grid = pool_grid(&cfg.tune.grid, &pool.true_scores(&model))?;
            let (rule, diag) = bq_calibrate(&model, &pool, alpha, &bq_cfg, &grid)?;
            let trace = bq_trace(&diag);
            metrics(method, &model, rule.threshold, &test, !diag.feasible, trace)
        }
        Method::BqMatchedPhi => {
            // Exploratory matched-candidate extension: risk-control calibrate
            // every candidate on the pool, keep the one with the smallest
            // pool-average set size at its own threshold.
            let mut best: Option<(f64, String, ScoreModel, BqDiagnostics)> = None;
            for cand in candidates {
                let model = fit_candidate(&train, cand)?;
                let grid = pool_grid(&cfg.tune.grid, &pool.true_scores(&model))?;
                let (_, diag) = bq_calibrate(&model, &pool, alpha, &bq_cfg, &grid)?;
                let sizes = pool.set_sizes(&model, diag.selected_lambda);
                let avg = sizes.iter().sum::<f64>() / sizes.len() as f64;
                let replace = match &best {
                    None => true,
                    Some((best_avg, best_id, _, _)) => {
                        avg < *best_avg || (avg == *best_avg && cand.id < *best_id)
                    }
                };
                if replace {
                    best = Some((avg, cand.id.clone(), model, diag));
                }
            }
            let (_, _, model, diag) = best.expect("non-empty candidate class");
            let trace = bq_trace(&diag);
            metrics(
                method,
                &model,
                diag.selected_lambda,
                &test,
                !diag.feasible,
                trace,
            )
        }
        Method::BqRecalibrateDco => {
            let tuned = dco_tune(&audited_train, &audited_tune, candidates, alpha, &cfg.tune)?;
            let model = fit_candidate(&train, &tuned.selected)?;
            let grid = pool_grid(&cfg.tune.grid, &pool.true_scores(&model))?;
            let (rule, diag) = bq_calibrate(&model, &pool, alpha, &bq_cfg, &grid)?;
            let trace = ThresholdTrace {
                lambda_tune: Some(tuned.lambda_tune),
                lambda_bq: Some(diag.selected_lambda),
                p_bq: Some(diag.feasibility_prob),
                ..Default::default()
            };
            let fallback = tuned.fallback_used || !diag.feasible;
            metrics(method, &model, rule.threshold, &test, fallback, trace)
        }
    }
}

fn bq_trace(diag: &BqDiagnostics) -> ThresholdTrace {
    ThresholdTrace {
        lambda_bq: Some(diag.selected_lambda),
        p_bq: Some(diag.feasibility_prob),
        ..Default::default()
    }
}

/// Execute one method end-to-end on a split plan and evaluate on its test set.
pub fn run_trial(
    data: &TaskData,
    candidates: &[Candidate],
    alpha: Alpha,
    method: Method,
    plan: &SplitPlan,
    cfg: &TrialConfig,
) -> Result<TrialMetrics> {
    run_trial_inner(data, candidates, alpha, method, plan, cfg, None)
}

/// Like [`run_trial`], additionally returning every raw dataset index the
/// tuning stage read. Data hygiene demands this set never meets cal or test.
pub fn run_trial_audited(
    data: &TaskData,
    candidates: &[Candidate],
    alpha: Alpha,
    method: Method,
    plan: &SplitPlan,
    cfg: &TrialConfig,
) -> Result<(TrialMetrics, BTreeSet<usize>)> {
    let log = ReadLog::new();
    let metrics = run_trial_inner(data, candidates, alpha, method, plan, cfg, Some(&log))?;
    Ok((metrics, log.snapshot()))
}

/// Where each seed's dataset comes from.
#[derive(Debug, Clone)]
pub enum TaskSource {
    /// A synthetic generator; each seed may draw a fresh dataset.
    Synthetic {
        task: SyntheticTask,
        n_samples: usize,
    },
    /// A fixed pool (precomputed scores); seeds vary only the split plan.
    Fixed(Arc<TaskData>),
}

/// Experiment-level configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub n_seeds: usize,
    pub ratios: SplitRatios,
    pub master_seed: u64,
    /// Draw a fresh synthetic dataset per seed (ignored for fixed pools).
    pub resample_per_seed: bool,
    /// Method pairs compared by paired Wilcoxon tests; both members must be
    /// listed in `methods`.
    pub wilcoxon_pairs: Vec<(Method, Method)>,
    pub trial: TrialConfig,
}

impl ExperimentConfig {
    pub fn new(
        methods: Vec<Method>,
        n_seeds: usize,
        ratios: SplitRatios,
        master_seed: u64,
    ) -> Self {
        let wilcoxon_pairs = default_pairs(&methods);
        ExperimentConfig {
            methods,
            n_seeds,
            ratios,
            master_seed,
            resample_per_seed: true,
            wilcoxon_pairs,
            trial: TrialConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods declared".into()));
        }
        if self.n_seeds < 2 {
            return Err(Error::InvalidConfig(
                "need at least 2 seeds for std estimates".into(),
            ));
        }
        for (a, b) in &self.wilcoxon_pairs {
            if !self.methods.contains(a) || !self.methods.contains(b) {
                return Err(Error::InvalidConfig(format!(
                    "wilcoxon pair ({}, {}) not contained in methods",
                    a.name(),
                    b.name()
                )));
            }
        }
        self.ratios.validate()
    }
}

/// With exactly two methods, compare them; otherwise compare everything to
/// the first declared method.
pub fn default_pairs(methods: &[Method]) -> Vec<(Method, Method)> {
    match methods {
        [] | [_] => Vec::new(),
        [a, rest @ ..] => rest.iter().map(|b| (*a, *b)).collect(),
    }
}

/// Worker pool bounded by the `DCO_WORKERS` environment variable.
fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("DCO_WORKERS") {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => return Err(Error::InvalidWorkerCount(raw)),
        },
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))
}

/// Run all methods over derived seeds and aggregate.
///
/// Within a seed every method shares the same dataset and split plan, which
/// is what makes the paired Wilcoxon comparisons valid.
pub fn run_experiment(
    source: &TaskSource,
    candidates: &[Candidate],
    alpha: Alpha,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let shared: Option<Arc<TaskData>> = match source {
        TaskSource::Fixed(data) => Some(data.clone()),
        TaskSource::Synthetic { task, n_samples } => {
            (!cfg.resample_per_seed).then(|| Arc::new(task.generate(*n_samples)))
        }
    };
    let pool = worker_pool()?;
    let seeds: Vec<Result<SeedRecord>> = pool.install(|| {
        (0..cfg.n_seeds)
            .into_par_iter()
            .map(|seed_index| {
                let seed = derive_seed(cfg.master_seed, seed_index as u64);
                let data: Arc<TaskData> = match (&shared, source) {
                    (Some(data), _) => data.clone(),
                    (None, TaskSource::Synthetic { task, n_samples }) => {
                        Arc::new(task.generate_seeded(*n_samples, seed))
                    }
                    (None, TaskSource::Fixed(data)) => data.clone(),
                };
                let plan = make_splits_for(&data, &cfg.ratios, seed)?;
                let mut trials = Vec::with_capacity(cfg.methods.len());
                for &method in &cfg.methods {
                    trials.push(run_trial(
                        &data, candidates, alpha, method, &plan, &cfg.trial,
                    )?);
                }
                Ok(SeedRecord {
                    seed_index,
                    seed,
                    trials,
                })
            })
            .collect()
    });
    let seeds: Vec<SeedRecord> = seeds.into_iter().collect::<Result<_>>()?;
    report::aggregate(alpha, cfg, seeds)
}

/// Split-ratio ablation over a fixed non-training budget.
///
/// Each `(tune, cal)` share pair, e.g. `(33, 67)`, reallocates the budget
/// while train and test fractions stay put.
pub fn ablate_split_ratios(
    source: &TaskSource,
    candidates: &[Candidate],
    alpha: Alpha,
    shares: &[(u32, u32)],
    cfg: &ExperimentConfig,
) -> Result<Vec<LabeledReport>> {
    if shares.is_empty() {
        return Err(Error::InvalidConfig("no split ratios declared".into()));
    }
    let mut reports = Vec::with_capacity(shares.len());
    for &(tune_part, cal_part) in shares {
        let total = f64::from(tune_part) + f64::from(cal_part);
        if total <= 0.0 {
            return Err(Error::BadSplitRatios);
        }
        let mut ratio_cfg = cfg.clone();
        ratio_cfg.ratios = cfg
            .ratios
            .with_budget_shares(f64::from(tune_part) / total, f64::from(cal_part) / total)?;
        let report = run_experiment(source, candidates, alpha, &ratio_cfg)?;
        reports.push(LabeledReport {
            label: format!("{tune_part}/{cal_part}"),
            report,
        });
    }
    Ok(reports)
}

/// One experiment per target miscoverage level.
pub fn sweep_alpha(
    source: &TaskSource,
    candidates: &[Candidate],
    alphas: &[Alpha],
    cfg: &ExperimentConfig,
) -> Result<Vec<LabeledReport>> {
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("no alpha levels declared".into()));
    }
    alphas
        .iter()
        .map(|&alpha| {
            let report = run_experiment(source, candidates, alpha, cfg)?;
            Ok(LabeledReport {
                label: format!("alpha={alpha}"),
                report,
            })
        })
        .collect()
}
