//! Aggregation of per-seed trials into experiment reports.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Method, TrialMetrics};
use crate::alpha::Alpha;
use crate::error::{Error, Result};
use crate::stats::{wilcoxon_signed_rank, PairedSamples, WilcoxonMode};

/// Sample mean and standard deviation (ddof 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(MeanStd { mean, std })
}

/// Aggregated metrics of one method across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub certified: bool,
    pub coverage: MeanStd,
    /// Mean size over trials with finite sizes; absent when every trial was
    /// excluded.
    pub avg_size: Option<MeanStd>,
    pub p95_size: Option<MeanStd>,
    /// Threshold statistics over finite-threshold trials.
    pub threshold: Option<MeanStd>,
    pub fallback_count: usize,
    pub infinite_threshold_count: usize,
    /// Trials excluded from the size means because their size was infinite.
    pub size_excluded_count: usize,
}

/// Paired Wilcoxon comparison of one metric between two methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonComparison {
    pub method_a: Method,
    pub method_b: Method,
    pub metric: String,
    pub p_value: f64,
    pub n_used: usize,
    pub degenerate: bool,
}

/// All trials of one seed, in declared method order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed_index: usize,
    pub seed: u64,
    pub trials: Vec<TrialMetrics>,
}

/// Aggregated experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub alpha: Alpha,
    pub n_seeds: usize,
    pub methods: Vec<MethodSummary>,
    pub wilcoxon: Vec<WilcoxonComparison>,
    /// How often the tuning stage picked each candidate (selecting methods).
    pub selection_frequencies: BTreeMap<String, usize>,
    /// Fraction of seeds choosing the modal candidate; absent when no method
    /// ran a candidate search.
    pub stability: Option<f64>,
    /// The experiment configuration echoed for provenance.
    pub config_echo: serde_json::Value,
    pub per_seed: Vec<SeedRecord>,
}

/// A report with the ablation or sweep setting that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub report: ExperimentReport,
}

fn metric_of(trial: &TrialMetrics, metric: &str) -> f64 {
    match metric {
        "coverage" => trial.coverage,
        "avg_size" => trial.avg_size,
        "p95_size" => trial.p95_size,
        _ => unreachable!("unknown metric {metric}"),
    }
}

pub(super) fn aggregate(
    alpha: Alpha,
    cfg: &ExperimentConfig,
    seeds: Vec<SeedRecord>,
) -> Result<ExperimentReport> {
    let trials_of = |method: Method| -> Vec<&TrialMetrics> {
        // First occurrence of the method within each seed.
        seeds
            .iter()
            .filter_map(|seed| seed.trials.iter().find(|t| t.method == method))
            .collect()
    };

    let mut methods = Vec::with_capacity(cfg.methods.len());
    let mut summarised: Vec<Method> = Vec::new();
    for &method in &cfg.methods {
        if summarised.contains(&method) {
            continue;
        }
        summarised.push(method);
        let trials = trials_of(method);
        if trials.len() != seeds.len() {
            return Err(Error::InvalidConfig(format!(
                "method {} missing from some seeds",
                method.name()
            )));
        }
        let coverage = mean_std(&trials.iter().map(|t| t.coverage).collect::<Vec<_>>())
            .expect("at least one seed");
        let finite_sizes: Vec<f64> = trials
            .iter()
            .map(|t| t.avg_size)
            .filter(|v| v.is_finite())
            .collect();
        let finite_p95: Vec<f64> = trials
            .iter()
            .map(|t| t.p95_size)
            .filter(|v| v.is_finite())
            .collect();
        let finite_thresholds: Vec<f64> = trials
            .iter()
            .map(|t| t.threshold)
            .filter(|v| v.is_finite())
            .collect();
        methods.push(MethodSummary {
            method,
            certified: method.certified(),
            coverage,
            avg_size: mean_std(&finite_sizes),
            p95_size: mean_std(&finite_p95),
            threshold: mean_std(&finite_thresholds),
            fallback_count: trials.iter().filter(|t| t.fallback_used).count(),
            infinite_threshold_count: trials.iter().filter(|t| t.infinite_threshold).count(),
            size_excluded_count: trials.len() - finite_sizes.len(),
        });
    }

    let mut wilcoxon = Vec::new();
    for &(a, b) in &cfg.wilcoxon_pairs {
        let trials_a = trials_of(a);
        let trials_b = trials_of(b);
        for metric in ["coverage", "avg_size", "p95_size"] {
            let mut xs = Vec::with_capacity(seeds.len());
            let mut ys = Vec::with_capacity(seeds.len());
            for (ta, tb) in trials_a.iter().zip(&trials_b) {
                let (x, y) = (metric_of(ta, metric), metric_of(tb, metric));
                // Seeds with an infinite size on either side drop out of the
                // size comparisons, keeping the pairing consistent.
                if x.is_finite() && y.is_finite() {
                    xs.push(x);
                    ys.push(y);
                }
            }
            if xs.is_empty() {
                continue;
            }
            let pairs = PairedSamples::new(xs, ys)?;
            let result = wilcoxon_signed_rank(&pairs, WilcoxonMode::Auto);
            wilcoxon.push(WilcoxonComparison {
                method_a: a,
                method_b: b,
                metric: metric.to_owned(),
                p_value: result.p_value,
                n_used: pairs.a.len(),
                degenerate: result.degenerate,
            });
        }
    }

    let selecting = cfg.methods.iter().copied().find(Method::selects_candidate);
    let mut selection_frequencies = BTreeMap::new();
    if let Some(method) = selecting {
        for trial in trials_of(method) {
            *selection_frequencies
                .entry(trial.selected_candidate.clone())
                .or_insert(0) += 1;
        }
    }
    let stability = selecting.map(|_| {
        selection_frequencies.values().copied().max().unwrap_or(0) as f64 / seeds.len() as f64
    });

    Ok(ExperimentReport {
        alpha,
        n_seeds: seeds.len(),
        methods,
        wilcoxon,
        selection_frequencies,
        stability,
        config_echo: serde_json::to_value(cfg)
            .map_err(|e| Error::InvalidConfig(format!("config echo: {e}")))?,
        per_seed: seeds,
    })
}

/// Write the per-seed metrics table as CSV. An `experiment` label column
/// distinguishes ablation or sweep settings sharing one file.
pub fn write_per_seed_csv<W: Write>(
    out: &mut W,
    labeled: &[(&str, &ExperimentReport)],
) -> Result<()> {
    writeln!(
        out,
        "experiment,seed_index,seed,method,coverage,avg_size,p95_size,threshold,\
         selected_candidate,certified,fallback_used,infinite_threshold,\
         lambda_tune,q_cal,lambda_bq,p_bq"
    )?;
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (label, report) in labeled {
        for seed in &report.per_seed {
            for t in &seed.trials {
                writeln!(
                    out,
                    "{label},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    seed.seed_index,
                    seed.seed,
                    t.method.name(),
                    t.coverage,
                    t.avg_size,
                    t.p95_size,
                    t.threshold,
                    t.selected_candidate,
                    t.certified,
                    t.fallback_used,
                    t.infinite_threshold,
                    fmt_opt(t.trace.lambda_tune),
                    fmt_opt(t.trace.q_cal),
                    fmt_opt(t.trace.lambda_bq),
                    fmt_opt(t.trace.p_bq),
                )?;
            }
        }
    }
    Ok(())
}
