//! Softmax classification scorer over Gaussian class-conditional features.
//!
//! Predictive uncertainty is approximated by `T` jittered probability draws
//! standing in for stochastic forward passes. Two scores are derived from the
//! draws: the posterior NLL `-log mean_t p_t(c|x)` and the
//! amortised-overlap-importance NLL `-log (sum_t p_t^2 / sum_t p_t)`.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::task::{DataView, Input, Target};
use super::Candidate;
use crate::error::{Error, Result};

/// Probabilities are clamped here before taking logs, so a class to which
/// every draw assigns zero mass still has a finite score.
pub const PROBABILITY_CLAMP: f64 = 1e-12;

const DEFAULT_DRAWS: usize = 20;

/// Which per-class score the candidate uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    PosteriorNll,
    AoiNll,
}

impl ScoreVariant {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "posterior_nll" => Ok(ScoreVariant::PosteriorNll),
            "aoi_nll" => Ok(ScoreVariant::AoiNll),
            other => Err(Error::BadCandidateParam {
                key: "score_variant".to_owned(),
                problem: format!("unknown variant {other:?}"),
            }),
        }
    }
}

/// Fitted nearest-center softmax scorer with jittered probability draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationModel {
    candidate: Candidate,
    class_count: usize,
    centers: Vec<Vec<f64>>,
    /// Pooled within-class scale estimated on the training split.
    spread: f64,
    temperature: f64,
    variant: ScoreVariant,
    /// Per-draw, per-class logit jitter, fixed at fit time.
    draw_offsets: Vec<Vec<f64>>,
}

impl ClassificationModel {
    pub(super) fn fit(train: &DataView<'_>, cand: &Candidate, seed: u64) -> Result<Self> {
        let variant = ScoreVariant::parse(cand.param_text("score_variant")?)?;
        let temperature = cand.param_f64("temperature")?;
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(Error::BadCandidateParam {
                key: "temperature".to_owned(),
                problem: "must be positive".to_owned(),
            });
        }
        let jitter = cand.param_f64_or("jitter", 0.0)?;
        if jitter < 0.0 {
            return Err(Error::BadCandidateParam {
                key: "jitter".to_owned(),
                problem: "must be non-negative".to_owned(),
            });
        }
        let draws = cand.param_f64_or("draws", DEFAULT_DRAWS as f64)? as usize;
        if draws == 0 {
            return Err(Error::BadCandidateParam {
                key: "draws".to_owned(),
                problem: "must be at least 1".to_owned(),
            });
        }

        let class_count = train.class_count();
        let mut dim = 0;
        let mut sums = vec![Vec::<f64>::new(); class_count];
        let mut counts = vec![0usize; class_count];
        let mut points: Vec<(Vec<f64>, usize)> = Vec::with_capacity(train.len());
        for pos in 0..train.len() {
            let (x, y) = train.pair(pos);
            let (Input::Features(x), Target::Label(c)) = (x, y) else {
                return Err(Error::InvalidTask(
                    "classification fit needs feature/label pairs".into(),
                ));
            };
            dim = x.len();
            if sums[c].is_empty() {
                sums[c] = vec![0.0; dim];
            }
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
            counts[c] += 1;
            points.push((x.to_vec(), c));
        }
        let global: Vec<f64> = (0..dim)
            .map(|j| points.iter().map(|(x, _)| x[j]).sum::<f64>() / points.len() as f64)
            .collect();
        // Classes absent from the training split fall back to the global mean.
        let centers: Vec<Vec<f64>> = (0..class_count)
            .map(|c| {
                if counts[c] == 0 {
                    global.clone()
                } else {
                    sums[c].iter().map(|s| s / counts[c] as f64).collect()
                }
            })
            .collect();
        let sq_sum: f64 = points
            .iter()
            .map(|(x, c)| {
                x.iter()
                    .zip(&centers[*c])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum();
        let spread = (sq_sum / (points.len() * dim) as f64).sqrt().max(1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw_offsets = (0..draws)
            .map(|_| {
                (0..class_count)
                    .map(|_| jitter * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Ok(ClassificationModel {
            candidate: cand.clone(),
            class_count,
            centers,
            spread,
            temperature,
            variant,
            draw_offsets,
        })
    }

    pub fn candidate(&self) -> &Candidate {
        &self.candidate
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let denom = 2.0 * self.spread * self.spread;
        self.centers
            .iter()
            .map(|mu| {
                -x.iter()
                    .zip(mu)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / denom
            })
            .collect()
    }

    /// Averaged and AOI-reweighted per-class probabilities over the draws.
    pub fn probabilities(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let logits = self.logits(x);
        let k = self.class_count;
        let mut sum_p = vec![0.0; k];
        let mut sum_p2 = vec![0.0; k];
        for offsets in &self.draw_offsets {
            let scaled: Vec<f64> = logits
                .iter()
                .zip(offsets)
                .map(|(l, o)| (l + o) / self.temperature)
                .collect();
            let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scaled.iter().map(|&v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for c in 0..k {
                let p = exps[c] / total;
                sum_p[c] += p;
                sum_p2[c] += p * p;
            }
        }
        let t = self.draw_offsets.len() as f64;
        let mean: Vec<f64> = sum_p.iter().map(|s| s / t).collect();
        let aoi: Vec<f64> = sum_p2
            .iter()
            .zip(&sum_p)
            .map(|(&p2, &p)| if p > 0.0 { p2 / p } else { 0.0 })
            .collect();
        (mean, aoi)
    }

    /// Per-class non-conformity scores under the candidate's variant.
    pub fn class_scores(&self, x: &[f64]) -> Vec<f64> {
        let (mean, aoi) = self.probabilities(x);
        let probs = match self.variant {
            ScoreVariant::PosteriorNll => mean,
            ScoreVariant::AoiNll => aoi,
        };
        probs
            .into_iter()
            .map(|p| -p.max(PROBABILITY_CLAMP).ln())
            .collect()
    }
}
