//! Exact split-conformal calibration.
//!
//! Given m calibration scores `S_(1) <= ... <= S_(m)` and a miscoverage level
//! alpha, the deployed threshold is the order statistic `S_(k)` at rank
//! `k = ceil((m+1)(1-alpha))`, or `+inf` when `k = m+1`. Under exchangeability
//! the coverage of the induced prediction set is at least `1 - alpha` and at
//! most `1 - alpha + 1/(m+1)` for continuous scores.

use serde::{Deserialize, Serialize};

use crate::alpha::Alpha;
use crate::error::{Error, Result};
use crate::scores::{Candidate, DataView, Input, PredictionSet, ScoreModel};

/// Validated vector of finite calibration scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationScores {
    values: Vec<f64>,
}

impl CalibrationScores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySet("calibration"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore);
        }
        Ok(CalibrationScores { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The exact conformal quantile `S_(k)`, or `+inf` on the overflow branch.
pub fn conformal_quantile(scores: &CalibrationScores, alpha: Alpha) -> f64 {
    let m = scores.len();
    let k = alpha.conformal_rank(m);
    if k > m {
        return f64::INFINITY;
    }
    let mut sorted = scores.values.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    sorted[k - 1]
}

/// How a deployed rule's threshold was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSource {
    /// Split-conformal quantile of an untouched calibration split.
    SplitConformal,
    /// Dirichlet-MC risk-control threshold on the matched-budget pool.
    RiskControl,
    /// Tuning-split threshold deployed directly; not conformally certified.
    DirectTune,
}

/// A deployed prediction rule: candidate plus threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedRule {
    pub candidate: Candidate,
    #[serde(with = "crate::conformal::threshold_serde")]
    pub threshold: f64,
    pub alpha: Alpha,
    pub m_cal: usize,
    pub source: RuleSource,
}

/// Score the calibration pairs and recalibrate to the exact conformal quantile.
pub fn calibrate(model: &ScoreModel, cal: &DataView<'_>, alpha: Alpha) -> Result<CalibratedRule> {
    if cal.is_empty() {
        return Err(Error::EmptySet("calibration"));
    }
    let scores = CalibrationScores::new(cal.true_scores(model))?;
    let threshold = conformal_quantile(&scores, alpha);
    Ok(CalibratedRule {
        candidate: model.candidate().clone(),
        threshold,
        alpha,
        m_cal: scores.len(),
        source: RuleSource::SplitConformal,
    })
}

/// The prediction set of a rule at one input.
pub fn predict_set(
    rule: &CalibratedRule,
    model: &ScoreModel,
    x: Input<'_>,
) -> Result<PredictionSet> {
    if rule.candidate.id != model.candidate().id {
        return Err(Error::CandidateMismatch {
            rule: rule.candidate.id.clone(),
            model: model.candidate().id.clone(),
        });
    }
    Ok(model.prediction_set(x, rule.threshold))
}

/// JSON representation of possibly-infinite thresholds: numbers stay numbers,
/// `+inf` becomes the string `"+inf"` (serde_json would emit null otherwise).
pub mod threshold_serde {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            serializer.serialize_f64(*v)
        } else if *v == f64::INFINITY {
            serializer.serialize_str("+inf")
        } else {
            serializer.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(v) => Ok(v),
            Raw::Text(s) => match s.as_str() {
                "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(D::Error::custom(format!("bad threshold {other:?}"))),
            },
        }
    }

    /// Same sentinel convention for optional thresholds.
    pub mod opt {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct Wrap(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &Option<f64>, serializer: S) -> Result<S::Ok, S::Error> {
            v.map(Wrap).serialize(serializer)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            deserializer: D,
        ) -> Result<Option<f64>, D::Error> {
            Ok(Option::<Wrap>::deserialize(deserializer)?.map(|w| w.0))
        }
    }
}
