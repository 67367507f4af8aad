//! Synthetic tasks, datasets, and index-restricted views.
//!
//! A [`DataView`] is the only way pipeline stages touch data: it exposes a
//! fixed index set and optionally records every raw index it resolves, so a
//! test can prove that the tuning stage never read calibration or test
//! points.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{ScoreModel, TaskKind};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Spread of classification class centers around the origin.
const CENTER_SPREAD: f64 = 2.0;

/// Targets of a dataset: real responses or class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Values(Vec<f64>),
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(v) => v.len(),
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A realised dataset a task generated (or a precomputed score pool).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub kind: TaskKind,
    /// Feature rows; empty for precomputed pools.
    pub features: Vec<Vec<f64>>,
    pub targets: Targets,
    /// Number of classes; 0 for regression.
    pub class_count: usize,
    /// Known observation noise scale, for conjugate regression fits.
    pub noise_scale: Option<f64>,
    /// Seed the data was generated from (0 for files); folded into model seeds.
    pub origin_seed: u64,
    /// Precomputed per-candidate score tables, keyed by candidate id.
    #[serde(default)]
    pub tables: BTreeMap<String, Arc<Vec<Vec<f64>>>>,
}

impl TaskData {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Class labels when the task is label-valued.
    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels(l) => Some(l),
            Targets::Values(_) => None,
        }
    }

    pub fn view<'a>(&'a self, indices: &'a [usize]) -> DataView<'a> {
        DataView {
            data: self,
            indices,
            log: None,
        }
    }

    pub fn audited_view<'a>(&'a self, indices: &'a [usize], log: &'a ReadLog) -> DataView<'a> {
        DataView {
            data: self,
            indices,
            log: Some(log),
        }
    }
}

/// One observation's input, borrowed from the dataset.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Features(&'a [f64]),
    /// Raw row index into a precomputed score table.
    Row(usize),
}

/// One observation's target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Value(f64),
    Label(usize),
}

/// Thread-safe log of raw dataset indices resolved through a view.
#[derive(Debug, Default)]
pub struct ReadLog {
    seen: Mutex<BTreeSet<usize>>,
}

impl ReadLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, raw: usize) {
        self.seen.lock().expect("read log poisoned").insert(raw);
    }

    pub fn snapshot(&self) -> BTreeSet<usize> {
        self.seen.lock().expect("read log poisoned").clone()
    }
}

/// An index-restricted, optionally audited window onto a dataset.
#[derive(Clone, Copy)]
pub struct DataView<'a> {
    data: &'a TaskData,
    indices: &'a [usize],
    log: Option<&'a ReadLog>,
}

impl<'a> DataView<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn kind(&self) -> TaskKind {
        self.data.kind
    }

    pub fn class_count(&self) -> usize {
        self.data.class_count
    }

    pub fn origin_seed(&self) -> u64 {
        self.data.origin_seed
    }

    pub fn noise_scale(&self) -> Option<f64> {
        self.data.noise_scale
    }

    pub(super) fn score_table(&self, candidate_id: &str) -> Option<Arc<Vec<Vec<f64>>>> {
        self.data.tables.get(candidate_id).cloned()
    }

    /// Resolve position `pos` to its raw index, recording the read.
    fn resolve(&self, pos: usize) -> usize {
        let raw = self.indices[pos];
        if let Some(log) = self.log {
            log.record(raw);
        }
        raw
    }

    pub fn input(&self, pos: usize) -> Input<'a> {
        let raw = self.resolve(pos);
        match self.data.kind {
            TaskKind::Precomputed => Input::Row(raw),
            _ => Input::Features(&self.data.features[raw]),
        }
    }

    pub fn target(&self, pos: usize) -> Target {
        let raw = self.resolve(pos);
        match &self.data.targets {
            Targets::Values(v) => Target::Value(v[raw]),
            Targets::Labels(l) => Target::Label(l[raw]),
        }
    }

    pub fn pair(&self, pos: usize) -> (Input<'a>, Target) {
        (self.input(pos), self.target(pos))
    }

    /// Scores of the true targets under `model`, in view order.
    pub fn true_scores(&self, model: &ScoreModel) -> Vec<f64> {
        (0..self.len())
            .map(|pos| {
                let (x, y) = self.pair(pos);
                model.score(x, y)
            })
            .collect()
    }

    /// Set sizes at `lambda` under `model`, in view order.
    pub fn set_sizes(&self, model: &ScoreModel, lambda: f64) -> Vec<f64> {
        (0..self.len())
            .map(|pos| model.set_size_at(self.input(pos), lambda))
            .collect()
    }
}

/// Hidden generating parameters of a synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TrueParams {
    Regression { weights: Vec<f64>, intercept: f64 },
    Classification { centers: Vec<Vec<f64>> },
}

/// A synthetic data-generating process with computable population risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub dimension: usize,
    pub noise_scale: f64,
    pub class_count: usize,
    pub rng_seed: u64,
    true_params: TrueParams,
}

impl SyntheticTask {
    /// Gaussian linear regression: `y = w.x + b + noise`, `x ~ N(0, I)`.
    pub fn regression(dimension: usize, noise_scale: f64, rng_seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidTask("dimension must be at least 1".into()));
        }
        if !noise_scale.is_finite() || noise_scale <= 0.0 {
            return Err(Error::InvalidTask("noise_scale must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, 0));
        let weights = (0..dimension).map(|_| rng.sample(StandardNormal)).collect();
        let intercept = rng.sample(StandardNormal);
        Ok(SyntheticTask {
            kind: TaskKind::Regression,
            dimension,
            noise_scale,
            class_count: 0,
            rng_seed,
            true_params: TrueParams::Regression { weights, intercept },
        })
    }

    /// Gaussian class-conditional features: `x | c ~ N(center_c, noise^2 I)`.
    pub fn classification(
        dimension: usize,
        class_count: usize,
        noise_scale: f64,
        rng_seed: u64,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidTask("dimension must be at least 1".into()));
        }
        if class_count < 2 {
            return Err(Error::InvalidTask("class_count must be at least 2".into()));
        }
        if !noise_scale.is_finite() || noise_scale <= 0.0 {
            return Err(Error::InvalidTask("noise_scale must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, 0));
        let centers = (0..class_count)
            .map(|_| {
                (0..dimension)
                    .map(|_| CENTER_SPREAD * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Ok(SyntheticTask {
            kind: TaskKind::Classification,
            dimension,
            noise_scale,
            class_count,
            rng_seed,
            true_params: TrueParams::Classification { centers },
        })
    }

    /// Generate `n` observations from the task's own seed.
    pub fn generate(&self, n: usize) -> TaskData {
        self.generate_seeded(n, derive_seed(self.rng_seed, 1))
    }

    /// Generate `n` observations from an explicit data seed, keeping the same
    /// hidden generating parameters.
    pub fn generate_seeded(&self, n: usize, data_seed: u64) -> TaskData {
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
        match &self.true_params {
            TrueParams::Regression { weights, intercept } => {
                let mut features = Vec::with_capacity(n);
                let mut values = Vec::with_capacity(n);
                for _ in 0..n {
                    let x: Vec<f64> = (0..self.dimension)
                        .map(|_| rng.sample(StandardNormal))
                        .collect();
                    let mean: f64 =
                        x.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + intercept;
                    let noise: f64 = rng.sample(StandardNormal);
                    features.push(x);
                    values.push(mean + self.noise_scale * noise);
                }
                TaskData {
                    kind: TaskKind::Regression,
                    features,
                    targets: Targets::Values(values),
                    class_count: 0,
                    noise_scale: Some(self.noise_scale),
                    origin_seed: self.rng_seed,
                    tables: BTreeMap::new(),
                }
            }
            TrueParams::Classification { centers } => {
                let mut features = Vec::with_capacity(n);
                let mut labels = Vec::with_capacity(n);
                for _ in 0..n {
                    let c = rng.random_range(0..self.class_count);
                    let x: Vec<f64> = centers[c]
                        .iter()
                        .map(|&mu| mu + self.noise_scale * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    features.push(x);
                    labels.push(c);
                }
                TaskData {
                    kind: TaskKind::Classification,
                    features,
                    targets: Targets::Labels(labels),
                    class_count: self.class_count,
                    noise_scale: Some(self.noise_scale),
                    origin_seed: self.rng_seed,
                    tables: BTreeMap::new(),
                }
            }
        }
    }

    /// True conditional mean and noise scale of the regression response.
    pub fn regression_truth(&self, x: &[f64]) -> Option<(f64, f64)> {
        match &self.true_params {
            TrueParams::Regression { weights, intercept } => {
                let mean = x.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + intercept;
                Some((mean, self.noise_scale))
            }
            _ => None,
        }
    }

    /// True class posterior `p(c | x)` under uniform class priors.
    pub fn class_posterior(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.true_params {
            TrueParams::Classification { centers } => {
                let var = self.noise_scale * self.noise_scale;
                let log_liks: Vec<f64> = centers
                    .iter()
                    .map(|mu| {
                        -x.iter()
                            .zip(mu)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            / (2.0 * var)
                    })
                    .collect();
                let max = log_liks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = log_liks.iter().map(|&l| (l - max).exp()).collect();
                let total: f64 = weights.iter().sum();
                Some(weights.into_iter().map(|w| w / total).collect())
            }
            _ => None,
        }
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Population miscoverage `P(S(X, Y) > lambda)` of a fitted model.
///
/// The miscoverage probability conditional on `x` is evaluated analytically
/// (normal CDF for regression, the exact class posterior for classification);
/// only the input distribution is averaged by Monte Carlo, so the reported
/// standard error reflects input variation alone.
pub fn population_risk(
    task: &SyntheticTask,
    model: &ScoreModel,
    lambda: f64,
    n_draws: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if n_draws == 0 {
        return Err(Error::EmptySet("population risk draws"));
    }
    let probe = task.generate_seeded(n_draws, seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut conditionals = Vec::with_capacity(n_draws);
    match (model, task.kind) {
        (ScoreModel::Regression(m), TaskKind::Regression) => {
            for x in &probe.features {
                let predictive = m.predictive(x);
                let (true_mean, true_sd) = task.regression_truth(x).expect("regression task");
                let set = predictive.interval_at(lambda);
                let covered = match set {
                    super::PredictionSet::Interval { lo, hi } => {
                        std_normal.cdf((hi - true_mean) / true_sd)
                            - std_normal.cdf((lo - true_mean) / true_sd)
                    }
                    super::PredictionSet::FullLine => 1.0,
                    _ => 0.0,
                };
                conditionals.push(1.0 - covered);
            }
        }
        (ScoreModel::Classification(m), TaskKind::Classification) => {
            for x in &probe.features {
                let posterior = task.class_posterior(x).expect("classification task");
                let scores = m.class_scores(x);
                let miss: f64 = posterior
                    .iter()
                    .zip(&scores)
                    .filter(|(_, &s)| s > lambda)
                    .map(|(p, _)| p)
                    .sum();
                conditionals.push(miss);
            }
        }
        _ => {
            return Err(Error::KindMismatch {
                candidate: model.kind(),
                task: task.kind,
            });
        }
    }
    let n = conditionals.len() as f64;
    let mean = conditionals.iter().sum::<f64>() / n;
    let var = conditionals
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    Ok(RiskEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    })
}
