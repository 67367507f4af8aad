//! Decoupled conformal optimisation toolkit.
//!
//! Implements a train-tune-calibrate pipeline for conformal prediction:
//! structural candidates are selected on an independent tuning split, the
//! deployed threshold is the exact split-conformal quantile of a fresh
//! calibration split, and a coupled Dirichlet-MC risk-control baseline plus a
//! direct-tuning diagnostic run against it under a matched data budget. A
//! Monte Carlo harness verifies the finite-sample coverage guarantees at desk
//! scale.

pub mod alpha;
pub mod conformal;
pub mod error;
pub mod harness;
pub mod riskcontrol;
pub mod scores;
pub mod seed;
pub mod stats;
pub mod tuning;

pub use alpha::Alpha;
pub use conformal::{calibrate, conformal_quantile, CalibratedRule, CalibrationScores, RuleSource};
pub use error::{Error, Result};
pub use scores::{
    fit_candidate, Candidate, DataView, PredictionSet, ScoreModel, SyntheticTask, TaskData,
    TaskKind, PROBABILITY_CLAMP,
};
pub use tuning::{dco_tune, direct_tune, tuning_sample_size, ThresholdGrid, TuneResult};
