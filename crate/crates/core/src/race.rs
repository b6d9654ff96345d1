//! The six race categories and probability vectors over them.
//!
//! Category order is fixed for the whole crate and is stamped into every
//! artifact file (see [`RACE_ORDER_STAMP`]) so tables, weights and
//! predictions can never be read with permuted columns.

use std::fmt;
use std::ops::Index;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of race categories.
pub const NUM_RACES: usize = 6;

/// Tolerance on the sum of a [`RaceDistribution`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Comma-joined category labels in canonical order.
pub const RACE_ORDER_STAMP: &str = "white,black,hispanic,asian,aian,other";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Race {
    White,
    Black,
    Hispanic,
    /// Includes Native Hawaiian and Other Pacific Islander.
    Asian,
    /// American Indian or Alaska Native.
    Aian,
    /// Other races, including the Census "two or more races" column.
    Other,
}

impl Race {
    pub const ALL: [Race; NUM_RACES] = [
        Race::White,
        Race::Black,
        Race::Hispanic,
        Race::Asian,
        Race::Aian,
        Race::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Race> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Race::White => "white",
            Race::Black => "black",
            Race::Hispanic => "hispanic",
            Race::Asian => "asian",
            Race::Aian => "aian",
            Race::Other => "other",
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Race {
    type Err = Error;

    fn from_str(s: &str) -> Result<Race> {
        let t = s.trim().to_ascii_lowercase();
        Race::ALL
            .iter()
            .copied()
            .find(|r| r.label() == t)
            .ok_or_else(|| Error::InvalidValue(format!("unknown race label {s:?}")))
    }
}

/// A probability vector over the six race categories.
///
/// Every entry is non-negative and the entries sum to one within
/// [`SUM_TOLERANCE`]. Construction goes through [`RaceDistribution::new`]
/// or [`RaceDistribution::from_weights`], both of which enforce this.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; NUM_RACES]", into = "[f64; NUM_RACES]")]
pub struct RaceDistribution([f64; NUM_RACES]);

impl RaceDistribution {
    /// Validates an already-normalized vector.
    pub fn new(p: [f64; NUM_RACES]) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entries must be finite and non-negative: {p:?}"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, expected 1: {p:?}"
            )));
        }
        Ok(RaceDistribution(p))
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(w: [f64; NUM_RACES]) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "weights must be finite and non-negative: {w:?}"
            )));
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "weights have no positive mass: {w:?}"
            )));
        }
        Ok(RaceDistribution(w.map(|v| v / total)))
    }

    /// Builds a distribution from integer counts.
    pub fn from_counts(c: [u64; NUM_RACES]) -> Result<Self> {
        Self::from_weights(c.map(|v| v as f64))
    }

    pub fn uniform() -> Self {
        RaceDistribution([1.0 / NUM_RACES as f64; NUM_RACES])
    }

    /// All mass on one category.
    pub fn point(race: Race) -> Self {
        let mut p = [0.0; NUM_RACES];
        p[race.index()] = 1.0;
        RaceDistribution(p)
    }

    pub fn as_array(&self) -> &[f64; NUM_RACES] {
        &self.0
    }

    pub fn get(&self, race: Race) -> f64 {
        self.0[race.index()]
    }

    pub fn argmax(&self) -> Race {
        let mut best = 0;
        for i in 1..NUM_RACES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        Race::ALL[best]
    }

    pub fn max_abs_diff(&self, other: &RaceDistribution) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<Race> for RaceDistribution {
    type Output = f64;

    fn index(&self, race: Race) -> &f64 {
        &self.0[race.index()]
    }
}

impl TryFrom<[f64; NUM_RACES]> for RaceDistribution {
    type Error = Error;

    fn try_from(p: [f64; NUM_RACES]) -> Result<Self> {
        RaceDistribution::new(p)
    }
}

impl From<RaceDistribution> for [f64; NUM_RACES] {
    fn from(d: RaceDistribution) -> Self {
        d.0
    }
}

/// Checks a race-order stamp read from an artifact file.
pub fn check_race_order(stamp: &str) -> Result<()> {
    if stamp == RACE_ORDER_STAMP {
        Ok(())
    } else {
        Err(Error::RaceOrderMismatch {
            found: stamp.to_string(),
        })
    }
}
