//! Atomic file outputs and summary printing.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use dco_core::harness::{ExperimentReport, MeanStd};
use dco_core::tuning::TuneResult;

/// Write through a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn fmt_mean_std(value: Option<MeanStd>) -> String {
    match value {
        Some(MeanStd { mean, std }) => format!("{mean:.4} \u{b1} {std:.4}"),
        None => "-".to_owned(),
    }
}

/// Paper-style summary table: method, coverage, average size, P95.
pub fn render_report(label: &str, report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "[{label}] alpha={} seeds={}  (coverage / avg size / p95, mean \u{b1} std)",
        report.alpha, report.n_seeds
    );
    let _ = writeln!(
        out,
        "{:<20} {:>20} {:>20} {:>20}  {:>9}",
        "method", "coverage", "avg size", "p95 size", "certified"
    );
    for m in &report.methods {
        let _ = writeln!(
            out,
            "{:<20} {:>20} {:>20} {:>20}  {:>9}",
            m.method.name(),
            fmt_mean_std(Some(m.coverage)),
            fmt_mean_std(m.avg_size),
            fmt_mean_std(m.p95_size),
            if m.certified { "yes" } else { "no" },
        );
        if m.fallback_count > 0 || m.size_excluded_count > 0 {
            let _ = writeln!(
                out,
                "{:<20} fallbacks={} infinite_thresholds={} size_excluded={}",
                "", m.fallback_count, m.infinite_threshold_count, m.size_excluded_count
            );
        }
    }
    for w in &report.wilcoxon {
        let _ = writeln!(
            out,
            "wilcoxon {} vs {} [{}]: p={:.3e}{} (n={})",
            w.method_a.name(),
            w.method_b.name(),
            w.metric,
            w.p_value,
            if w.degenerate { " degenerate" } else { "" },
            w.n_used,
        );
    }
    if let Some(stability) = report.stability {
        let _ = writeln!(out, "selection stability: {:.1}%", 100.0 * stability);
    }
    out
}

/// Candidate table truncated to the ten smallest average sizes.
pub fn render_tune_table(result: &TuneResult) -> String {
    let mut rows: Vec<_> = result.table.iter().collect();
    rows.sort_by(|a, b| a.emp_size.total_cmp(&b.emp_size));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "selected {} at lambda_tune={:.6} (fallback: {})",
        result.selected.id, result.lambda_tune, result.fallback_used
    );
    let _ = writeln!(
        out,
        "{:<10} {:>10} {:>12} {:>10} {:>10}  {:<10}  params",
        "id", "lambda", "emp_risk", "avg size", "p95", "status"
    );
    for row in rows.iter().take(10) {
        let params = row
            .candidate
            .params
            .iter()
            .map(|(k, v)| match v {
                dco_core::scores::ParamValue::Float(f) => format!("{k}={f}"),
                dco_core::scores::ParamValue::Text(t) => format!("{k}={t}"),
            })
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(
            out,
            "{:<10} {:>10.4} {:>12.4} {:>10.4} {:>10.4}  {:<10}  {}",
            row.candidate.id,
            row.eval_lambda,
            row.emp_risk,
            row.emp_size,
            row.p95_size,
            if row.feasible {
                "feasible"
            } else {
                "infeasible"
            },
            params,
        );
    }
    if result.table.len() > 10 {
        let _ = writeln!(out, "... {} more candidates", result.table.len() - 10);
    }
    out
}
