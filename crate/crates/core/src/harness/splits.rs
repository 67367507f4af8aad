//! Deterministic train/tune/cal/test split plans.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::TaskData;

const SPLIT_NAMES: [&str; 4] = ["train", "tune", "cal", "test"];

/// Fractions of the dataset assigned to each split. Fractions must be
/// positive and sum to at most 1; any remainder is left unused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub tune: f64,
    pub cal: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, tune: f64, cal: f64, test: f64) -> Result<Self> {
        let ratios = SplitRatios {
            train,
            tune,
            cal,
            test,
        };
        ratios.validate()?;
        Ok(ratios)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.tune, self.cal, self.test];
        if parts.iter().any(|&f| !f.is_finite() || f <= 0.0) {
            return Err(Error::BadSplitRatios);
        }
        if parts.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::BadSplitRatios);
        }
        Ok(())
    }

    /// Non-training budget (tune + cal).
    pub fn budget(&self) -> f64 {
        self.tune + self.cal
    }

    /// Reallocate the fixed non-training budget between tune and cal.
    /// `tune_share + cal_share` must be 1 and both positive, so a `100/0`
    /// allocation is rejected.
    pub fn with_budget_shares(&self, tune_share: f64, cal_share: f64) -> Result<Self> {
        if tune_share <= 0.0 || cal_share <= 0.0 || (tune_share + cal_share - 1.0).abs() > 1e-9 {
            return Err(Error::BadSplitRatios);
        }
        let budget = self.budget();
        SplitRatios::new(
            self.train,
            budget * tune_share,
            budget * cal_share,
            self.test,
        )
    }
}

/// Disjoint index sets for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub tune: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl SplitPlan {
    /// Matched-budget calibration pool: tune followed by cal.
    pub fn pool(&self) -> Vec<usize> {
        let mut pool = self.tune.clone();
        pool.extend_from_slice(&self.cal);
        pool
    }
}

/// Largest-remainder rounding of `n * fraction` quotas to a grand total of
/// `round(n * sum(fractions))`, ties broken toward earlier splits.
fn largest_remainder(n: usize, fractions: [f64; 4]) -> [usize; 4] {
    let quotas: Vec<f64> = fractions.iter().map(|f| n as f64 * f).collect();
    let total = (quotas.iter().sum::<f64>()).round().min(n as f64) as usize;
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (quotas[i] - quotas[i].floor(), quotas[j] - quotas[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    let mut leftover = total.saturating_sub(assigned);
    for idx in order {
        if leftover == 0 {
            break;
        }
        counts[idx] += 1;
        leftover -= 1;
    }
    [counts[0], counts[1], counts[2], counts[3]]
}

fn plan_from_pools(
    pools: Vec<Vec<usize>>,
    per_pool_counts: Vec<[usize; 4]>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitPlan> {
    let mut splits: [Vec<usize>; 4] = Default::default();
    for (pool, counts) in pools.iter().zip(&per_pool_counts) {
        let mut offset = 0;
        for (split, &count) in splits.iter_mut().zip(counts) {
            split.extend_from_slice(&pool[offset..offset + count]);
            offset += count;
        }
    }
    for (split, name) in splits.iter_mut().zip(SPLIT_NAMES) {
        if split.is_empty() {
            return Err(Error::EmptySplit(name));
        }
        split.sort_unstable();
    }
    let [train, tune, cal, test] = splits;
    Ok(SplitPlan {
        train,
        tune,
        cal,
        test,
        seed,
        ratios,
    })
}

/// Deterministic shuffled partition of `0..n`.
pub fn make_splits(n: usize, ratios: &SplitRatios, seed: u64) -> Result<SplitPlan> {
    ratios.validate()?;
    let fractions = [ratios.train, ratios.tune, ratios.cal, ratios.test];
    let counts = largest_remainder(n, fractions);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    plan_from_pools(vec![indices], vec![counts], *ratios, seed)
}

/// Stratified partition: within every class the split counts stay within one
/// observation of exact proportionality.
pub fn make_splits_stratified(
    labels: &[usize],
    class_count: usize,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<SplitPlan> {
    ratios.validate()?;
    let fractions = [ratios.train, ratios.tune, ratios.cal, ratios.test];
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &label) in labels.iter().enumerate() {
        if label >= class_count {
            return Err(Error::Schema(format!(
                "label {label} out of range 0..{class_count}"
            )));
        }
        by_class[label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools = Vec::with_capacity(class_count);
    let mut per_pool_counts = Vec::with_capacity(class_count);
    for mut class_indices in by_class {
        class_indices.shuffle(&mut rng);
        per_pool_counts.push(largest_remainder(class_indices.len(), fractions));
        pools.push(class_indices);
    }
    plan_from_pools(pools, per_pool_counts, *ratios, seed)
}

/// Split a dataset, stratifying whenever it is label-valued.
pub fn make_splits_for(data: &TaskData, ratios: &SplitRatios, seed: u64) -> Result<SplitPlan> {
    match data.labels() {
        Some(labels) => make_splits_stratified(labels, data.class_count, ratios, seed),
        None => make_splits(data.len(), ratios, seed),
    }
}
