//! Conjugate Gaussian linear regression with a closed-form predictive.
//!
//! The noise variance is known (taken from the task) and the weights carry an
//! isotropic Gaussian prior with scale `prior_scale`, so both the posterior
//! and the posterior predictive are available in closed form and the interval
//! width at any threshold can be inverted analytically.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::task::{DataView, Input, Target};
use super::{Candidate, PredictionSet};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// A Gaussian posterior predictive `N(mean, stddev^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPredictive {
    mean: f64,
    stddev: f64,
}

impl GaussianPredictive {
    pub fn new(mean: f64, stddev: f64) -> Result<Self> {
        if !stddev.is_finite() || stddev <= 0.0 || !mean.is_finite() {
            return Err(Error::InvalidTask(format!(
                "Gaussian predictive needs finite mean and positive stddev, got ({mean}, {stddev})"
            )));
        }
        Ok(GaussianPredictive { mean, stddev })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn stddev(&self) -> f64 {
        self.stddev
    }

    pub fn density(&self, y: f64) -> f64 {
        let z = (y - self.mean) / self.stddev;
        (-0.5 * z * z).exp() / (self.stddev * std::f64::consts::TAU.sqrt())
    }

    /// Negative log predictive density `-log p(y)`.
    pub fn nll(&self, y: f64) -> f64 {
        let z = (y - self.mean) / self.stddev;
        0.5 * LN_2PI + self.stddev.ln() + 0.5 * z * z
    }

    /// Score at the density mode, the smallest attainable NLL.
    pub fn min_nll(&self) -> f64 {
        0.5 * LN_2PI + self.stddev.ln()
    }

    /// Width of `{y : nll(y) <= lambda}`: `2 sigma sqrt(2 (lambda - min_nll))`
    /// above the mode threshold, 0 below it, infinite at `lambda = +inf`.
    pub fn width_at(&self, lambda: f64) -> f64 {
        if lambda == f64::INFINITY {
            return f64::INFINITY;
        }
        let slack = lambda - self.min_nll();
        if slack < 0.0 {
            0.0
        } else {
            2.0 * self.stddev * (2.0 * slack).sqrt()
        }
    }

    /// The interval `{y : nll(y) <= lambda}` itself.
    pub fn interval_at(&self, lambda: f64) -> PredictionSet {
        if lambda == f64::INFINITY {
            return PredictionSet::FullLine;
        }
        let slack = lambda - self.min_nll();
        if slack < 0.0 {
            return PredictionSet::Empty;
        }
        let half = self.stddev * (2.0 * slack).sqrt();
        PredictionSet::Interval {
            lo: self.mean - half,
            hi: self.mean + half,
        }
    }
}

/// Fitted conjugate Gaussian linear model (bias folded in as a last feature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    candidate: Candidate,
    /// Posterior mean of the `d+1` weights, bias last.
    weights: Vec<f64>,
    /// Posterior covariance, row-major `(d+1) x (d+1)`.
    covariance: Vec<Vec<f64>>,
    noise_var: f64,
    /// Response grid bounds: `[min(y_train) - 2, max(y_train) + 2]`.
    response_lo: f64,
    response_hi: f64,
}

impl RegressionModel {
    pub(super) fn fit(train: &DataView<'_>, cand: &Candidate) -> Result<Self> {
        let prior_scale = cand.param_f64("prior_scale")?;
        if !prior_scale.is_finite() || prior_scale <= 0.0 {
            return Err(Error::NonPositivePriorScale);
        }
        let n = train.len();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for pos in 0..n {
            let (x, y) = train.pair(pos);
            let (Input::Features(x), Target::Value(y)) = (x, y) else {
                return Err(Error::InvalidTask(
                    "regression fit needs feature/value pairs".into(),
                ));
            };
            let mut row = x.to_vec();
            row.push(1.0);
            rows.push(row);
            targets.push(y);
        }
        let p = rows[0].len();
        let noise_sd = train_noise_scale(train)?;
        let noise_var = noise_sd * noise_sd;

        let design = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        let y = DVector::from_vec(targets.clone());
        let mut precision = design.transpose() * &design / noise_var;
        for j in 0..p {
            precision[(j, j)] += 1.0 / (prior_scale * prior_scale);
        }
        let chol = precision
            .cholesky()
            .expect("posterior precision is positive definite by construction");
        let covariance = chol.inverse();
        let mean = &covariance * design.transpose() * y / noise_var;

        let y_min = targets.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(RegressionModel {
            candidate: cand.clone(),
            weights: mean.iter().cloned().collect(),
            covariance: (0..p)
                .map(|i| (0..p).map(|j| covariance[(i, j)]).collect())
                .collect(),
            noise_var,
            response_lo: y_min - 2.0,
            response_hi: y_max + 2.0,
        })
    }

    pub fn candidate(&self) -> &Candidate {
        &self.candidate
    }

    /// Posterior predictive at `x`: `N(phi.mu, phi' Sigma phi + noise_var)`.
    pub fn predictive(&self, x: &[f64]) -> GaussianPredictive {
        let p = self.weights.len();
        assert_eq!(x.len() + 1, p, "feature dimension mismatch");
        let phi = |j: usize| if j + 1 == p { 1.0 } else { x[j] };
        let mut mean = 0.0;
        let mut var = self.noise_var;
        for i in 0..p {
            mean += phi(i) * self.weights[i];
            let mut sigma_phi = 0.0;
            for j in 0..p {
                sigma_phi += self.covariance[i][j] * phi(j);
            }
            var += phi(i) * sigma_phi;
        }
        GaussianPredictive::new(mean, var.sqrt()).expect("predictive variance is positive")
    }

    /// Response grid bounds used by the grid-counting width mode.
    pub fn response_bounds(&self) -> (f64, f64) {
        (self.response_lo, self.response_hi)
    }

    /// Grid-counting width of `{y : nll(y) <= lambda}` on `points` grid nodes.
    ///
    /// Verification aid for the analytic width; agrees with it to within one
    /// grid spacing whenever the interval lies inside the grid bounds. An
    /// infinite threshold covers every node and returns the full grid span.
    pub fn width_grid(&self, x: &[f64], lambda: f64, points: usize) -> f64 {
        assert!(points >= 2, "grid needs at least two points");
        let predictive = self.predictive(x);
        let span = self.response_hi - self.response_lo;
        let spacing = span / (points - 1) as f64;
        let inside = (0..points)
            .filter(|&i| {
                let y = self.response_lo + spacing * i as f64;
                predictive.nll(y) <= lambda
            })
            .count();
        (inside as f64 * spacing).min(span)
    }
}

/// The known noise scale travels with the task data through the view.
fn train_noise_scale(train: &DataView<'_>) -> Result<f64> {
    train
        .noise_scale()
        .ok_or_else(|| Error::InvalidTask("regression fit needs the task noise scale".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{fit_candidate, ScoreModel, SyntheticTask, TaskKind};

    fn fitted(noise: f64, n: usize, prior_scale: f64) -> ScoreModel {
        let task = SyntheticTask::regression(1, noise, 11).unwrap();
        let data = task.generate(n);
        let indices: Vec<usize> = (0..n).collect();
        let cand = Candidate::new("c", TaskKind::Regression).with_float("prior_scale", prior_scale);
        fit_candidate(&data.view(&indices), &cand).unwrap()
    }

    #[test]
    fn nll_at_mode_and_unit_offset() {
        let g = GaussianPredictive::new(0.0, 1.0).unwrap();
        assert!((g.nll(0.0) - 0.5 * LN_2PI).abs() < 1e-12);
        assert!((g.nll(1.0) - (0.5 * LN_2PI + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn width_inverts_nll() {
        let g = GaussianPredictive::new(0.3, 1.0).unwrap();
        // Threshold at the mode: width 0.
        assert_eq!(g.width_at(0.5 * LN_2PI), 0.0);
        // Threshold at nll(mean + 1): the interval is [mean-1, mean+1].
        let lambda = 0.5 * LN_2PI + 0.5;
        assert!((g.width_at(lambda) - 2.0).abs() < 1e-12);
        match g.interval_at(lambda) {
            PredictionSet::Interval { lo, hi } => {
                assert!((lo - (0.3 - 1.0)).abs() < 1e-12);
                assert!((hi - (0.3 + 1.0)).abs() < 1e-12);
            }
            other => panic!("expected interval, got {other:?}"),
        }
        assert_eq!(g.width_at(f64::INFINITY), f64::INFINITY);
        assert_eq!(g.interval_at(f64::NEG_INFINITY), PredictionSet::Empty);
    }

    #[test]
    fn density_integrates_to_one_on_wide_grid() {
        let g = GaussianPredictive::new(0.7, 1.3).unwrap();
        let (lo, hi, n) = (0.7 - 12.0 * 1.3, 0.7 + 12.0 * 1.3, 40_001);
        let h = (hi - lo) / (n - 1) as f64;
        let mass: f64 = (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * g.density(lo + h * i as f64)
            })
            .sum::<f64>()
            * h;
        assert!((mass - 1.0).abs() < 1e-3, "grid quadrature mass {mass}");
    }

    #[test]
    fn tiny_noise_yields_tiny_predictive_stddev() {
        // Conjugate posterior variance at a training input collapses with the
        // noise floor once n is large.
        let model = fitted(1e-9, 1000, 1.0);
        let task = SyntheticTask::regression(1, 1e-9, 11).unwrap();
        let data = task.generate(1000);
        for x in data.features.iter().take(20) {
            if let ScoreModel::Regression(m) = &model {
                assert!(m.predictive(x).stddev() < 1e-3);
            }
        }
    }

    #[test]
    fn zero_prior_scale_rejected() {
        let task = SyntheticTask::regression(1, 1.0, 11).unwrap();
        let data = task.generate(20);
        let indices: Vec<usize> = (0..20).collect();
        let cand = Candidate::new("c", TaskKind::Regression).with_float("prior_scale", 0.0);
        let err = fit_candidate(&data.view(&indices), &cand).unwrap_err();
        assert!(matches!(err, Error::NonPositivePriorScale));
    }

    #[test]
    fn grid_width_tracks_analytic_width() {
        let model = fitted(1.0, 150, 1.0);
        let ScoreModel::Regression(m) = &model else {
            unreachable!()
        };
        let x = [0.4];
        let predictive = m.predictive(&x);
        let lambda = predictive.min_nll() + 0.5;
        let analytic = predictive.width_at(lambda);
        let grid = m.width_grid(&x, lambda, 10_001);
        let spacing = (m.response_bounds().1 - m.response_bounds().0) / 10_000.0;
        assert!(
            (analytic - grid).abs() <= spacing,
            "analytic {analytic} grid {grid}"
        );
        // Infinite threshold covers the full grid span.
        let (lo, hi) = m.response_bounds();
        assert!((m.width_grid(&x, f64::INFINITY, 301) - (hi - lo)).abs() < 1e-9);
    }
}
