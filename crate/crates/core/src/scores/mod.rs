//! Candidate structures, score models, and synthetic tasks.
//!
//! A candidate `phi` is a structural configuration (score variant, prior
//! scale, temperature, ...). Fitting a candidate on training data produces an
//! immutable [`ScoreModel`] exposing the non-conformity score `S(x, y)` and
//! the size of the nested prediction set `{y : S(x, y) <= lambda}`.

mod classification;
mod precomputed;
mod regression;
mod task;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use classification::{ClassificationModel, ScoreVariant, PROBABILITY_CLAMP};
pub use precomputed::{load_precomputed_dir, load_score_csv, write_score_csv, PrecomputedModel};
pub use regression::{GaussianPredictive, RegressionModel};
pub use task::{
    population_risk, DataView, Input, ReadLog, RiskEstimate, SyntheticTask, Target, Targets,
    TaskData,
};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, fnv1a};

/// Kind tag shared by tasks and candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
    Precomputed,
}

/// A structural hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Float(f64),
    Text(String),
}

/// One candidate structure in the search class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub kind: TaskKind,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl Candidate {
    pub fn new(id: impl Into<String>, kind: TaskKind) -> Self {
        Candidate {
            id: id.into(),
            kind,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key.to_owned(), value);
        self
    }

    pub fn with_float(self, key: &str, value: f64) -> Self {
        self.with_param(key, ParamValue::Float(value))
    }

    pub fn with_text(self, key: &str, value: &str) -> Self {
        self.with_param(key, ParamValue::Text(value.to_owned()))
    }

    pub fn param_f64(&self, key: &str) -> Result<f64> {
        match self.params.get(key) {
            Some(ParamValue::Float(v)) => Ok(*v),
            Some(ParamValue::Text(t)) => Err(Error::BadCandidateParam {
                key: key.to_owned(),
                problem: format!("expected a number, got {t:?}"),
            }),
            None => Err(Error::BadCandidateParam {
                key: key.to_owned(),
                problem: "missing".to_owned(),
            }),
        }
    }

    pub fn param_f64_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.params.contains_key(key) {
            self.param_f64(key)
        } else {
            Ok(default)
        }
    }

    pub fn param_text(&self, key: &str) -> Result<&str> {
        match self.params.get(key) {
            Some(ParamValue::Text(t)) => Ok(t),
            Some(ParamValue::Float(v)) => Err(Error::BadCandidateParam {
                key: key.to_owned(),
                problem: format!("expected text, got {v}"),
            }),
            None => Err(Error::BadCandidateParam {
                key: key.to_owned(),
                problem: "missing".to_owned(),
            }),
        }
    }
}

/// Regression candidates over a list of prior scales.
pub fn regression_prior_scale_class(scales: &[f64]) -> Vec<Candidate> {
    scales
        .iter()
        .enumerate()
        .map(|(i, &scale)| {
            Candidate::new(format!("cand_{:03}", i + 1), TaskKind::Regression)
                .with_float("prior_scale", scale)
        })
        .collect()
}

/// The two-candidate regression class: prior scale in {1.0, 0.02}.
pub fn default_regression_class() -> Vec<Candidate> {
    regression_prior_scale_class(&[1.0, 0.02])
}

/// The default 16-candidate classification class:
/// score variant x jitter in {0.05, 0.1, 0.2, 0.3} x temperature in {1, 2}.
pub fn default_classification_class() -> Vec<Candidate> {
    let mut out = Vec::with_capacity(16);
    for variant in ["posterior_nll", "aoi_nll"] {
        for jitter in [0.05, 0.1, 0.2, 0.3] {
            for temperature in [1.0, 2.0] {
                let id = format!("cand_{:03}", out.len() + 1);
                out.push(
                    Candidate::new(id, TaskKind::Classification)
                        .with_text("score_variant", variant)
                        .with_float("jitter", jitter)
                        .with_float("temperature", temperature),
                );
            }
        }
    }
    out
}

/// A prediction set descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionSet {
    /// Regression interval `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
    /// The whole response line (infinite threshold, analytic mode).
    FullLine,
    /// Sorted label list.
    Labels { labels: Vec<usize> },
    /// No response is plausible at this threshold.
    Empty,
}

impl PredictionSet {
    /// Interval width or label count; `FullLine` has infinite size.
    pub fn size(&self) -> f64 {
        match self {
            PredictionSet::Interval { lo, hi } => hi - lo,
            PredictionSet::FullLine => f64::INFINITY,
            PredictionSet::Labels { labels } => labels.len() as f64,
            PredictionSet::Empty => 0.0,
        }
    }

    pub fn contains(&self, target: Target) -> bool {
        match (self, target) {
            (PredictionSet::Interval { lo, hi }, Target::Value(y)) => *lo <= y && y <= *hi,
            (PredictionSet::FullLine, Target::Value(_)) => true,
            (PredictionSet::Labels { labels }, Target::Label(c)) => labels.contains(&c),
            (PredictionSet::Empty, _) => false,
            _ => false,
        }
    }
}

/// A fitted, immutable score model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScoreModel {
    Regression(RegressionModel),
    Classification(ClassificationModel),
    Precomputed(PrecomputedModel),
}

impl ScoreModel {
    pub fn candidate(&self) -> &Candidate {
        match self {
            ScoreModel::Regression(m) => m.candidate(),
            ScoreModel::Classification(m) => m.candidate(),
            ScoreModel::Precomputed(m) => m.candidate(),
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            ScoreModel::Regression(_) => TaskKind::Regression,
            ScoreModel::Classification(_) => TaskKind::Classification,
            ScoreModel::Precomputed(_) => TaskKind::Precomputed,
        }
    }

    /// Non-conformity score `S(x, y)`.
    pub fn score(&self, x: Input<'_>, y: Target) -> f64 {
        match (self, x, y) {
            (ScoreModel::Regression(m), Input::Features(x), Target::Value(y)) => {
                m.predictive(x).nll(y)
            }
            (ScoreModel::Classification(m), Input::Features(x), Target::Label(c)) => {
                m.class_scores(x)[c]
            }
            (ScoreModel::Precomputed(m), Input::Row(row), Target::Label(c)) => m.score(row, c),
            _ => panic!(
                "score: input/target shape does not match model kind {:?}",
                self.kind()
            ),
        }
    }

    /// Size of `{y : S(x, y) <= lambda}`: interval width or label count.
    ///
    /// Non-decreasing in `lambda`. For regression the analytic width is used;
    /// an infinite threshold yields an infinite width, which callers must
    /// handle (the harness reports such trials separately).
    pub fn set_size_at(&self, x: Input<'_>, lambda: f64) -> f64 {
        match (self, x) {
            (ScoreModel::Regression(m), Input::Features(x)) => m.predictive(x).width_at(lambda),
            (ScoreModel::Classification(m), Input::Features(x)) => {
                count_at_most(&m.class_scores(x), lambda) as f64
            }
            (ScoreModel::Precomputed(m), Input::Row(row)) => {
                count_at_most(m.row(row), lambda) as f64
            }
            _ => panic!(
                "set_size_at: input shape does not match model kind {:?}",
                self.kind()
            ),
        }
    }

    /// The prediction set itself at threshold `lambda`.
    pub fn prediction_set(&self, x: Input<'_>, lambda: f64) -> PredictionSet {
        match (self, x) {
            (ScoreModel::Regression(m), Input::Features(x)) => m.predictive(x).interval_at(lambda),
            (ScoreModel::Classification(m), Input::Features(x)) => {
                labels_at_most(&m.class_scores(x), lambda)
            }
            (ScoreModel::Precomputed(m), Input::Row(row)) => labels_at_most(m.row(row), lambda),
            _ => panic!(
                "prediction_set: input shape does not match model kind {:?}",
                self.kind()
            ),
        }
    }

    /// Per-class scores, for classification-like models.
    pub fn class_scores(&self, x: Input<'_>) -> Option<Vec<f64>> {
        match (self, x) {
            (ScoreModel::Classification(m), Input::Features(x)) => Some(m.class_scores(x)),
            (ScoreModel::Precomputed(m), Input::Row(row)) => Some(m.row(row).to_vec()),
            _ => None,
        }
    }
}

fn count_at_most(scores: &[f64], lambda: f64) -> usize {
    scores.iter().filter(|&&s| s <= lambda).count()
}

fn labels_at_most(scores: &[f64], lambda: f64) -> PredictionSet {
    let labels: Vec<usize> = (0..scores.len()).filter(|&c| scores[c] <= lambda).collect();
    PredictionSet::Labels { labels }
}

/// Fit a candidate on the training view, producing an immutable model.
pub fn fit_candidate(train: &DataView<'_>, cand: &Candidate) -> Result<ScoreModel> {
    if cand.kind != train.kind() {
        return Err(Error::KindMismatch {
            candidate: cand.kind,
            task: train.kind(),
        });
    }
    match cand.kind {
        TaskKind::Regression => {
            if train.is_empty() {
                return Err(Error::EmptySet("train"));
            }
            Ok(ScoreModel::Regression(RegressionModel::fit(train, cand)?))
        }
        TaskKind::Classification => {
            if train.is_empty() {
                return Err(Error::EmptySet("train"));
            }
            let seed = derive_seed(train.origin_seed(), fnv1a(cand.id.as_bytes()));
            Ok(ScoreModel::Classification(ClassificationModel::fit(
                train, cand, seed,
            )?))
        }
        TaskKind::Precomputed => {
            let table = train.score_table(&cand.id).ok_or_else(|| {
                Error::Schema(format!(
                    "no precomputed score table for candidate {:?}",
                    cand.id
                ))
            })?;
            Ok(ScoreModel::Precomputed(PrecomputedModel::new(
                cand.clone(),
                table,
                train.class_count(),
            )))
        }
    }
}
