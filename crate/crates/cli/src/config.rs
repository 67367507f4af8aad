//! Run configuration: JSON schema, validation, and flag overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use dco_core::harness::{
    default_pairs, ExperimentConfig, Method, SplitRatios, TaskSource, TrialConfig,
};
use dco_core::riskcontrol::BqConfig;
use dco_core::scores::{
    default_classification_class, default_regression_class, load_precomputed_dir,
    regression_prior_scale_class,
};
use dco_core::tuning::TuneConfig;
use dco_core::{Alpha, Candidate, SyntheticTask, TaskData};

/// Version stamp embedded in every output file.
pub const SCHEMA_VERSION: &str = "1";

/// Data-generating task description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Regression {
        dimension: usize,
        noise_scale: f64,
        #[serde(default)]
        seed: u64,
        n_samples: usize,
    },
    Classification {
        dimension: usize,
        class_count: usize,
        noise_scale: f64,
        #[serde(default)]
        seed: u64,
        n_samples: usize,
    },
    /// Directory of `<candidate_id>.csv` score files.
    Precomputed { dir: PathBuf },
}

/// Candidate class description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum CandidateSpec {
    /// `regression2` (prior scales 1.0 and 0.02) or `classification16`.
    Preset { preset: String },
    /// One regression candidate per prior scale.
    PriorScales { prior_scales: Vec<f64> },
    /// Fully explicit candidate list.
    List { list: Vec<Candidate> },
}

/// Workflow selector for `experiment`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum ModeSpec {
    #[default]
    Experiment,
    /// Split-ratio ablation over the fixed non-training budget;
    /// entries like `"33/67"` are tune/cal shares.
    Ablation {
        ratios: Vec<String>,
    },
    Sweep {
        alphas: Vec<Alpha>,
    },
}

fn default_n_seeds() -> usize {
    50
}

fn default_methods() -> Vec<String> {
    vec!["dco".to_owned(), "bq_fixed".to_owned()]
}

fn default_resample() -> bool {
    true
}

/// The validated run configuration; unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<CandidateSpec>,
    pub alpha: Alpha,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    pub ratios: SplitRatios,
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_resample")]
    pub resample_per_seed: bool,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub bq: BqConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_candidate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wilcoxon_pairs: Option<Vec<(String, String)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(config)
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        self.methods
            .iter()
            .map(|name| Method::parse(name).map_err(|e| anyhow!(e)))
            .collect()
    }

    /// Parse `"20/80"`-style tune/cal share labels.
    pub fn parse_ratio_label(label: &str) -> Result<(u32, u32)> {
        let (a, b) = label
            .split_once('/')
            .ok_or_else(|| anyhow!("ratio {label:?} must look like 20/80"))?;
        let tune: u32 = a.trim().parse().context("tune share")?;
        let cal: u32 = b.trim().parse().context("cal share")?;
        if tune == 0 || cal == 0 {
            bail!("ratio {label:?} leaves a split empty");
        }
        Ok((tune, cal))
    }

    /// Materialise the dataset source plus candidate class.
    pub fn build_task(&self) -> Result<(TaskSource, Vec<Candidate>)> {
        match &self.task {
            TaskSpec::Regression {
                dimension,
                noise_scale,
                seed,
                n_samples,
            } => {
                let task = SyntheticTask::regression(*dimension, *noise_scale, *seed)?;
                let candidates = self.build_candidates()?;
                Ok((
                    TaskSource::Synthetic {
                        task,
                        n_samples: *n_samples,
                    },
                    candidates,
                ))
            }
            TaskSpec::Classification {
                dimension,
                class_count,
                noise_scale,
                seed,
                n_samples,
            } => {
                let task =
                    SyntheticTask::classification(*dimension, *class_count, *noise_scale, *seed)?;
                let candidates = self.build_candidates()?;
                Ok((
                    TaskSource::Synthetic {
                        task,
                        n_samples: *n_samples,
                    },
                    candidates,
                ))
            }
            TaskSpec::Precomputed { dir } => {
                if self.candidates.is_some() {
                    bail!("precomputed tasks take their candidates from the score directory");
                }
                let (data, candidates) = load_precomputed_dir(dir)?;
                Ok((TaskSource::Fixed(Arc::new(data)), candidates))
            }
        }
    }

    fn build_candidates(&self) -> Result<Vec<Candidate>> {
        let spec = self.candidates.as_ref().ok_or_else(|| {
            anyhow!("synthetic tasks need a candidates spec (preset, prior_scales, or list)")
        })?;
        let candidates = match spec {
            CandidateSpec::Preset { preset } => match preset.as_str() {
                "regression2" => default_regression_class(),
                "classification16" => default_classification_class(),
                other => bail!("unknown candidate preset {other:?}"),
            },
            CandidateSpec::PriorScales { prior_scales } => {
                regression_prior_scale_class(prior_scales)
            }
            CandidateSpec::List { list } => list.clone(),
        };
        if candidates.is_empty() {
            bail!("candidate class is empty");
        }
        Ok(candidates)
    }

    /// One realised dataset for the single-run commands (tune, calibrate).
    pub fn realise_single(&self, source: &TaskSource) -> Arc<TaskData> {
        match source {
            TaskSource::Fixed(data) => data.clone(),
            TaskSource::Synthetic { task, n_samples } => Arc::new(
                task.generate_seeded(*n_samples, dco_core::seed::derive_seed(self.master_seed, 0)),
            ),
        }
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let methods = self.parsed_methods()?;
        let wilcoxon_pairs = match &self.wilcoxon_pairs {
            None => default_pairs(&methods),
            Some(pairs) => pairs
                .iter()
                .map(|(a, b)| {
                    Ok((
                        Method::parse(a).map_err(|e| anyhow!(e))?,
                        Method::parse(b).map_err(|e| anyhow!(e))?,
                    ))
                })
                .collect::<Result<_>>()?,
        };
        Ok(ExperimentConfig {
            methods,
            n_seeds: self.n_seeds,
            ratios: self.ratios,
            master_seed: self.master_seed,
            resample_per_seed: self.resample_per_seed,
            wilcoxon_pairs,
            trial: TrialConfig {
                tune: self.tune.clone(),
                bq: self.bq.clone(),
                fixed_candidate: self.fixed_candidate.clone(),
            },
        })
    }
}

/// Flag overrides shared by the config-driven commands.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub methods: Option<String>,
    pub alpha: Option<String>,
    pub seeds: Option<usize>,
    pub ratios: Option<String>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            config.master_seed = seed;
        }
        if let Some(methods) = &self.methods {
            config.methods = methods.split(',').map(|m| m.trim().to_owned()).collect();
        }
        if let Some(alpha) = &self.alpha {
            config.alpha = Alpha::parse(alpha)?;
        }
        if let Some(seeds) = self.seeds {
            config.n_seeds = seeds;
        }
        if let Some(ratios) = &self.ratios {
            let labels: Vec<String> = ratios.split(',').map(|r| r.trim().to_owned()).collect();
            if labels.len() == 1 {
                // A single ratio reallocates the budget of the current plan.
                let (tune, cal) = RunConfig::parse_ratio_label(&labels[0])?;
                let total = f64::from(tune) + f64::from(cal);
                config.ratios = config
                    .ratios
                    .with_budget_shares(f64::from(tune) / total, f64::from(cal) / total)?;
            } else {
                config.mode = ModeSpec::Ablation { ratios: labels };
            }
        }
        Ok(())
    }
}
