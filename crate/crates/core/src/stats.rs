//! Statistical utilities: empirical quantiles, the paired Wilcoxon
//! signed-rank test, a DKW-based check that the calibration quantile
//! concentrates, and a continued-fraction regularized incomplete beta used as
//! the analytic oracle for the Dirichlet-MC risk bound.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::alpha::Alpha;
use crate::conformal::{conformal_quantile, CalibrationScores};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Linear-interpolation empirical quantile: index `h = p (n-1)` on the sorted
/// values, interpolating between the bracketing order statistics.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySet("percentile input"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!(
            "percentile level {p} outside [0, 1]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    // Equal endpoints also guard interpolation between infinities.
    if lo == hi || sorted[lo] == sorted[hi] {
        return Ok(sorted[lo]);
    }
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Paired observations for a signed-rank test.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSamples {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedSamples {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::InvalidConfig(
                "paired samples need equal, non-zero lengths".into(),
            ));
        }
        Ok(PairedSamples { a, b })
    }
}

/// How the signed-rank null distribution is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMode {
    /// Enumerate all `2^n` sign assignments (n after zero-dropping).
    Exact,
    /// Normal approximation with tie and continuity corrections.
    NormalApprox,
    /// Exact for n <= 12, normal approximation above.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub p_value: f64,
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// Pairs remaining after zero differences were dropped.
    pub n_used: usize,
    /// All differences were zero; `p_value` is 1 by convention.
    pub degenerate: bool,
}

/// Two-sided paired Wilcoxon signed-rank test.
///
/// Zero differences are dropped; tied absolute differences receive average
/// ranks.
pub fn wilcoxon_signed_rank(pairs: &PairedSamples, mode: WilcoxonMode) -> WilcoxonResult {
    let diffs: Vec<f64> = pairs
        .a
        .iter()
        .zip(&pairs.b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return WilcoxonResult {
            p_value: 1.0,
            w_plus: 0.0,
            n_used: 0,
            degenerate: true,
        };
    }
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    let exact = match mode {
        WilcoxonMode::Exact => true,
        WilcoxonMode::NormalApprox => false,
        WilcoxonMode::Auto => n <= 12,
    };
    let p_value = if exact {
        exact_two_sided_p(&ranks, w_plus)
    } else {
        normal_two_sided_p(&ranks, w_plus)
    };
    WilcoxonResult {
        p_value,
        w_plus,
        n_used: n,
        degenerate: false,
    }
}

/// Average ranks of `values` (1-based), ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p via full enumeration of sign assignments:
/// `2 min(P(W+ <= w), P(W+ >= w))`, capped at 1.
fn exact_two_sided_p(ranks: &[f64], w_obs: f64) -> f64 {
    let n = ranks.len();
    assert!(n <= 25, "exact enumeration limited to small n");
    let total = 1u64 << n;
    let mut at_most = 0u64;
    let mut at_least = 0u64;
    // Observed W+ values are sums of rank subsets; compare with a small
    // epsilon so average ranks (multiples of 0.5) tie exactly.
    let eps = 1e-9;
    for mask in 0..total {
        let mut w = 0.0;
        for (bit, r) in ranks.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                w += r;
            }
        }
        if w <= w_obs + eps {
            at_most += 1;
        }
        if w >= w_obs - eps {
            at_least += 1;
        }
    }
    let tail = at_most.min(at_least) as f64 / total as f64;
    (2.0 * tail).min(1.0)
}

/// Normal approximation with tie correction and continuity correction.
fn normal_two_sided_p(ranks: &[f64], w_obs: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    // Tie correction: subtract sum(t^3 - t)/48 over tie groups.
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let variance = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if variance <= 0.0 {
        return 1.0;
    }
    let z = ((w_obs - mean).abs() - 0.5).max(0.0) / variance.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}

/// A score distribution with a known population quantile, for concentration
/// checks.
pub trait ScoreSampler: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64;
    /// `inf {q : F(q) >= p}`.
    fn population_quantile(&self, p: f64) -> f64;
}

/// Uniform scores on (0, 1); density 1 everywhere.
#[derive(Debug, Clone, Copy)]
pub struct UniformSampler;

impl ScoreSampler for UniformSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        rng.random()
    }

    fn population_quantile(&self, p: f64) -> f64 {
        p
    }
}

/// Gaussian scores.
#[derive(Debug, Clone, Copy)]
pub struct GaussianSampler {
    pub mean: f64,
    pub stddev: f64,
}

impl ScoreSampler for GaussianSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.mean + self.stddev * rng.sample::<f64, _>(StandardNormal)
    }

    fn population_quantile(&self, p: f64) -> f64 {
        let normal = Normal::new(self.mean, self.stddev).expect("valid normal");
        normal.inverse_cdf(p)
    }
}

/// Outcome of the calibration-quantile concentration check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationCheck {
    pub t: f64,
    pub density_floor_c: f64,
    pub m_cal: usize,
    /// DKW bound `2 exp(-2 m (c t - 2/m)_+^2)`, clamped to [0, 1].
    pub bound: f64,
    pub observed_rate: f64,
    /// `c t <= 2/m`: the bound is 1 and the check passes trivially.
    pub vacuous: bool,
    pub passed: bool,
}

/// Monte Carlo check of the DKW quantile-accuracy bound.
///
/// Runs `trials` independent calibrations of size `m_cal`, measures how often
/// the conformal quantile lands further than `t` from the population quantile,
/// and compares against the bound with a 3-sigma binomial allowance.
pub fn check_quantile_concentration(
    sampler: &dyn ScoreSampler,
    alpha: Alpha,
    m_cal: usize,
    t: f64,
    density_floor_c: f64,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationCheck> {
    if m_cal == 0 || trials == 0 {
        return Err(Error::EmptySet("concentration trials"));
    }
    if !t.is_finite() || t <= 0.0 || !density_floor_c.is_finite() || density_floor_c <= 0.0 {
        return Err(Error::InvalidConfig("t and c must be positive".into()));
    }
    let margin = density_floor_c * t - 2.0 / m_cal as f64;
    let vacuous = margin <= 0.0;
    let bound = if vacuous {
        1.0
    } else {
        (2.0 * (-2.0 * m_cal as f64 * margin * margin).exp()).min(1.0)
    };
    let q_star = sampler.population_quantile(1.0 - alpha.value());
    let exceed: usize = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, trial as u64));
            let values: Vec<f64> = (0..m_cal).map(|_| sampler.sample(&mut rng)).collect();
            let scores = CalibrationScores::new(values).expect("sampler produced finite scores");
            let q_hat = conformal_quantile(&scores, alpha);
            usize::from((q_hat - q_star).abs() > t)
        })
        .sum();
    let observed_rate = exceed as f64 / trials as f64;
    let slack = 3.0 * (bound * (1.0 - bound) / trials as f64).sqrt();
    let passed = vacuous || observed_rate <= bound + slack;
    Ok(ConcentrationCheck {
        t,
        density_floor_c,
        m_cal,
        bound,
        observed_rate,
        vacuous,
        passed,
    })
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
///
/// Accurate to roughly 1e-14 over the domain; `I_0 = 0`, `I_1 = 1`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !a.is_finite() || a <= 0.0 || !b.is_finite() || b <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "beta parameters must be positive, got ({a}, {b})"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidConfig(format!(
            "beta argument {x} outside [0, 1]"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let front =
        (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    // Use the continued fraction in its rapidly convergent region.
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Lentz's algorithm for the incomplete beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;

    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=MAX_ITER {
        let m_f = m as f64;
        let m2 = 2.0 * m_f;

        let aa = m_f * (b - m_f) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m_f) * (qab + m_f) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;

        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Log-gamma by the Lanczos approximation (g = 7, 9 coefficients).
fn ln_gamma(z: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    if z < 0.5 {
        // Reflection: Gamma(z) Gamma(1-z) = pi / sin(pi z).
        let pi = std::f64::consts::PI;
        return (pi / (pi * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut x = 0.999_999_999_999_809_9;
    for (i, &c) in COEFFS.iter().enumerate() {
        x += c / (z + i as f64 + 1.0);
    }
    let t = z + COEFFS.len() as f64 - 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}
