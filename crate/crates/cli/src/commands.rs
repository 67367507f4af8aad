//! The tune, calibrate, predict, and experiment workflows.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use dco_core::conformal::{calibrate, CalibratedRule};
use dco_core::harness::{
    ablate_split_ratios, make_splits_for, run_experiment, sweep_alpha, write_per_seed_csv,
    LabeledReport,
};
use dco_core::scores::{fit_candidate, Input, PredictionSet, ScoreModel};
use dco_core::seed::derive_seed;
use dco_core::tuning::{dco_tune, TuneResult};
use dco_core::PROBABILITY_CLAMP;

use crate::config::{ModeSpec, RunConfig, SCHEMA_VERSION};
use crate::output::{render_report, render_tune_table, write_json};

/// Exit status of a successful command run.
pub const EXIT_OK: u8 = 0;
/// A tuning stage fell back to the infeasible rule (output still written).
pub const EXIT_FALLBACK: u8 = 3;

/// Envelope around the tuning result file.
#[derive(Debug, Serialize, Deserialize)]
pub struct TuneFile {
    pub schema_version: String,
    pub master_seed: u64,
    /// The tuning threshold only ranks candidates; deployment recalibrates.
    pub lambda_tune_disposition: String,
    pub probability_clamp: f64,
    pub result: TuneResult,
}

/// Envelope around a deployed rule, with the fitted model embedded so
/// `predict` can score fresh feature rows.
#[derive(Debug, Serialize, Deserialize)]
pub struct RuleFile {
    pub schema_version: String,
    pub master_seed: u64,
    pub rule: CalibratedRule,
    pub model: Option<ScoreModel>,
}

/// Envelope around experiment reports.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: String,
    pub master_seed: u64,
    pub mode: String,
    pub probability_clamp: f64,
    /// The run configuration exactly as executed.
    pub config: RunConfig,
    pub reports: Vec<LabeledReport>,
}

fn out_path(config: &RunConfig, out: &Option<PathBuf>, name: &str) -> PathBuf {
    out.clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
        .join(name)
}

/// Run the tuning stage once and write `tune_result.json`.
pub fn cmd_tune(config: &RunConfig, out: &Option<PathBuf>) -> Result<u8> {
    let (source, candidates) = config.build_task()?;
    let data = config.realise_single(&source);
    let plan = make_splits_for(&data, &config.ratios, derive_seed(config.master_seed, 1))?;
    let result = dco_tune(
        &data.view(&plan.train),
        &data.view(&plan.tune),
        &candidates,
        config.alpha,
        &config.tune,
    )?;
    print!("{}", render_tune_table(&result));
    let fallback = result.fallback_used;
    let file = TuneFile {
        schema_version: SCHEMA_VERSION.to_owned(),
        master_seed: config.master_seed,
        lambda_tune_disposition: "discarded before deployment; ranks candidates only".to_owned(),
        probability_clamp: PROBABILITY_CLAMP,
        result,
    };
    write_json(&out_path(config, out, "tune_result.json"), &file)?;
    Ok(if fallback { EXIT_FALLBACK } else { EXIT_OK })
}

/// Run the full tune-then-recalibrate pipeline once and write `rule.json`
/// (plus the tuning table beside it).
pub fn cmd_calibrate(config: &RunConfig, out: &Option<PathBuf>) -> Result<u8> {
    let (source, candidates) = config.build_task()?;
    let data = config.realise_single(&source);
    let plan = make_splits_for(&data, &config.ratios, derive_seed(config.master_seed, 1))?;
    let train = data.view(&plan.train);
    let result = dco_tune(
        &train,
        &data.view(&plan.tune),
        &candidates,
        config.alpha,
        &config.tune,
    )?;
    let model = fit_candidate(&train, &result.selected)?;
    let rule = calibrate(&model, &data.view(&plan.cal), config.alpha)?;
    println!(
        "calibrated {}: threshold {} on m_cal={} (lambda_tune was {:.6})",
        rule.candidate.id, rule.threshold, rule.m_cal, result.lambda_tune
    );
    let fallback = result.fallback_used;
    let tune_file = TuneFile {
        schema_version: SCHEMA_VERSION.to_owned(),
        master_seed: config.master_seed,
        lambda_tune_disposition: "discarded before deployment; ranks candidates only".to_owned(),
        probability_clamp: PROBABILITY_CLAMP,
        result,
    };
    write_json(&out_path(config, out, "tune_result.json"), &tune_file)?;
    let rule_file = RuleFile {
        schema_version: SCHEMA_VERSION.to_owned(),
        master_seed: config.master_seed,
        rule,
        model: Some(model),
    };
    write_json(&out_path(config, out, "rule.json"), &rule_file)?;
    Ok(if fallback { EXIT_FALLBACK } else { EXIT_OK })
}

/// Run the experiment, ablation, or sweep mode and write `report.json` and
/// `per_seed.csv`.
pub fn cmd_experiment(config: &RunConfig, out: &Option<PathBuf>) -> Result<u8> {
    let (source, candidates) = config.build_task()?;
    let experiment = config.experiment_config()?;
    let (mode, reports) = match &config.mode {
        ModeSpec::Experiment => {
            let report = run_experiment(&source, &candidates, config.alpha, &experiment)?;
            (
                "experiment",
                vec![LabeledReport {
                    label: "experiment".to_owned(),
                    report,
                }],
            )
        }
        ModeSpec::Ablation { ratios } => {
            let shares = ratios
                .iter()
                .map(|label| RunConfig::parse_ratio_label(label))
                .collect::<Result<Vec<_>>>()?;
            (
                "ablation",
                ablate_split_ratios(&source, &candidates, config.alpha, &shares, &experiment)?,
            )
        }
        ModeSpec::Sweep { alphas } => (
            "sweep",
            sweep_alpha(&source, &candidates, alphas, &experiment)?,
        ),
    };
    for labeled in &reports {
        print!("{}", render_report(&labeled.label, &labeled.report));
    }
    let mut csv_bytes = Vec::new();
    let labeled_refs: Vec<(&str, &dco_core::harness::ExperimentReport)> = reports
        .iter()
        .map(|l| (l.label.as_str(), &l.report))
        .collect();
    write_per_seed_csv(&mut csv_bytes, &labeled_refs)?;
    crate::output::write_atomic(&out_path(config, out, "per_seed.csv"), &csv_bytes)?;
    let file = ReportFile {
        schema_version: SCHEMA_VERSION.to_owned(),
        master_seed: config.master_seed,
        mode: mode.to_owned(),
        probability_clamp: PROBABILITY_CLAMP,
        config: config.clone(),
        reports,
    };
    write_json(&out_path(config, out, "report.json"), &file)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InputSchema {
    Scores,
    Features,
}

/// Apply a stored rule to a CSV of score rows or feature rows and write
/// `predictions.csv`.
pub fn cmd_predict(rule_path: &Path, input_path: &Path, out_dir: &Option<PathBuf>) -> Result<u8> {
    let text = std::fs::read_to_string(rule_path)
        .with_context(|| format!("cannot read rule {}", rule_path.display()))?;
    let rule_file: RuleFile = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse {}", rule_path.display()))?;
    let rule = &rule_file.rule;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(input_path)
        .with_context(|| format!("cannot read input {}", input_path.display()))?;
    let header = reader.headers()?.clone();
    let schema = sniff_schema(&header)?;

    let mut rows: Vec<(String, PredictionSet, Option<bool>)> = Vec::new();
    match schema {
        InputSchema::Scores => {
            if rule.candidate.kind == dco_core::TaskKind::Regression {
                bail!("regression rules take feature rows (sample_id,x_0,...)");
            }
            for record in reader.records() {
                let record = record?;
                let id = record[0].to_owned();
                let true_label: usize = record[1].trim().parse().context("true_label")?;
                let scores: Vec<f64> = (2..record.len())
                    .map(|i| record[i].trim().parse::<f64>().context("score cell"))
                    .collect::<Result<_>>()?;
                let labels: Vec<usize> = (0..scores.len())
                    .filter(|&c| scores[c] <= rule.threshold)
                    .collect();
                let covered = labels.contains(&true_label);
                rows.push((id, PredictionSet::Labels { labels }, Some(covered)));
            }
        }
        InputSchema::Features => {
            let model = rule_file.model.as_ref().ok_or_else(|| {
                anyhow!("rule file has no embedded model; feature input needs one")
            })?;
            if model.kind() == dco_core::TaskKind::Precomputed {
                bail!("precomputed rules take score rows (sample_id,true_label,score_0,...)");
            }
            if model.candidate().id != rule.candidate.id {
                bail!(
                    "rule candidate {:?} does not match embedded model {:?}",
                    rule.candidate.id,
                    model.candidate().id
                );
            }
            for record in reader.records() {
                let record = record?;
                let id = record[0].to_owned();
                let x: Vec<f64> = (1..record.len())
                    .map(|i| record[i].trim().parse::<f64>().context("feature cell"))
                    .collect::<Result<_>>()?;
                let set = dco_core::conformal::predict_set(rule, model, Input::Features(&x))?;
                rows.push((id, set, None));
            }
        }
    }

    let mut out = String::from("sample_id,size,set,covered\n");
    for (id, set, covered) in &rows {
        let set_text = match set {
            PredictionSet::Interval { lo, hi } => format!("{lo}..{hi}"),
            PredictionSet::FullLine => "all".to_owned(),
            PredictionSet::Labels { labels } if labels.is_empty() => "empty".to_owned(),
            PredictionSet::Labels { labels } => labels
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("|"),
            PredictionSet::Empty => "empty".to_owned(),
        };
        let covered_text = covered.map(|c| c.to_string()).unwrap_or_default();
        out.push_str(&format!("{id},{},{set_text},{covered_text}\n", set.size()));
    }
    let path = out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("."))
        .join("predictions.csv");
    crate::output::write_atomic(&path, out.as_bytes())?;
    println!("wrote {} prediction sets to {}", rows.len(), path.display());
    Ok(EXIT_OK)
}

fn sniff_schema(header: &csv::StringRecord) -> Result<InputSchema> {
    if header.len() >= 3 && &header[0] == "sample_id" && &header[1] == "true_label" {
        return Ok(InputSchema::Scores);
    }
    if header.len() >= 2 && &header[0] == "sample_id" && &header[1] == "x_0" {
        return Ok(InputSchema::Features);
    }
    bail!(
        "input header must be sample_id,true_label,score_0,... or sample_id,x_0,...; got {:?}",
        header
    )
}
