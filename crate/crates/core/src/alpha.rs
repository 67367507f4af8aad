//! Miscoverage level with an exact order-statistic rank.
//!
//! The calibration rank `k = ceil((m+1)(1-alpha))` must never be off by one:
//! a floating-point ceiling of an exactly integral product can round up and
//! silently change the deployed quantile. An [`Alpha`] therefore carries its
//! exact rational form when one is available and computes the rank as
//! `(m+1) - floor((m+1) * alpha)` in integer arithmetic; decimal levels fall
//! back to a snap-to-integer guard before flooring.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative width of the snap-to-integer guard for decimal alphas.
const SNAP_EPS: f64 = 1e-12;

/// Target miscoverage level in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    /// Exact rational level `num/den`.
    Rational { num: u64, den: u64 },
    /// Free-form decimal level.
    Decimal(f64),
}

impl Alpha {
    pub fn rational(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 || num >= den {
            return Err(Error::InvalidRationalAlpha { num, den });
        }
        Ok(Alpha::Rational { num, den })
    }

    pub fn decimal(value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::InvalidAlpha(value));
        }
        Ok(Alpha::Decimal(value))
    }

    /// Parse `"num/den"` or a decimal literal.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Some((num, den)) = text.split_once('/') {
            let num: u64 = num
                .trim()
                .parse()
                .map_err(|_| Error::AlphaParse(text.to_owned()))?;
            let den: u64 = den
                .trim()
                .parse()
                .map_err(|_| Error::AlphaParse(text.to_owned()))?;
            Self::rational(num, den)
        } else {
            let value: f64 = text
                .parse()
                .map_err(|_| Error::AlphaParse(text.to_owned()))?;
            Self::decimal(value)
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Alpha::Rational { num, den } => num as f64 / den as f64,
            Alpha::Decimal(v) => v,
        }
    }

    /// `floor((m+1) * alpha)`, exact for rationals, snap-guarded for decimals.
    fn scaled_floor(&self, m_plus_one: u64) -> u64 {
        match *self {
            Alpha::Rational { num, den } => {
                ((u128::from(m_plus_one) * u128::from(num)) / u128::from(den)) as u64
            }
            Alpha::Decimal(v) => {
                let x = m_plus_one as f64 * v;
                let nearest = x.round();
                if (x - nearest).abs() <= SNAP_EPS * x.abs().max(1.0) {
                    nearest as u64
                } else {
                    x.floor() as u64
                }
            }
        }
    }

    /// Conformal rank `k = ceil((m+1)(1-alpha))`, in `1..=m+1`.
    ///
    /// `k = m+1` signals the infinite-threshold branch.
    pub fn conformal_rank(&self, m: usize) -> usize {
        let m_plus_one = m as u64 + 1;
        let k = m_plus_one - self.scaled_floor(m_plus_one).min(m_plus_one - 1);
        k as usize
    }

    /// Largest miscoverage count `c` with `c/n <= alpha`.
    pub fn max_miscovered(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        self.scaled_floor(n as u64) as usize
    }

    /// Exact test of `count/n <= alpha`.
    pub fn admits(&self, count: usize, n: usize) -> bool {
        count <= self.max_miscovered(n)
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Alpha::Rational { num, den } => write!(f, "{num}/{den}"),
            Alpha::Decimal(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Alpha {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Alpha::Rational { .. } => serializer.serialize_str(&self.to_string()),
            Alpha::Decimal(v) => serializer.serialize_f64(v),
        }
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(v) => Alpha::decimal(v).map_err(D::Error::custom),
            Raw::Text(s) => Alpha::parse(&s).map_err(D::Error::custom),
        }
    }
}
