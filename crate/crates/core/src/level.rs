//! Consistency levels and their static mappings to credits, synchronisation
//! periods and cost thresholds.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::SimTime;

/// Execution credits per level, index 1..=11.
pub const ADD_FLOW_CREDITS: [u64; 11] = [2, 3, 5, 9, 17, 25, 33, 41, 49, 57, 65];

/// Lower index is stricter: more frequent synchronisation, fewer credits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ConsistencyLevel(u8);

impl ConsistencyLevel {
    pub const STRICTEST: ConsistencyLevel = ConsistencyLevel(1);
    pub const MOST_RELAXED: ConsistencyLevel = ConsistencyLevel(11);

    pub fn new(index: u8) -> Result<Self, LevelError> {
        if (1..=11).contains(&index) {
            Ok(ConsistencyLevel(index))
        } else {
            Err(LevelError::OutOfRange(index))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn tighten(self) -> Self {
        ConsistencyLevel(self.0.saturating_sub(1).max(1))
    }

    pub fn relax(self) -> Self {
        ConsistencyLevel((self.0 + 1).min(11))
    }

    pub fn all() -> impl Iterator<Item = ConsistencyLevel> {
        (1..=11).map(ConsistencyLevel)
    }
}

impl TryFrom<u8> for ConsistencyLevel {
    type Error = LevelError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        ConsistencyLevel::new(v)
    }
}

impl From<ConsistencyLevel> for u8 {
    fn from(cl: ConsistencyLevel) -> u8 {
        cl.0
    }
}

impl fmt::Display for ConsistencyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CL_{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LevelError {
    #[error("consistency level {0} outside [1, 11]")]
    OutOfRange(u8),
    #[error("level map is missing {0}")]
    Missing(ConsistencyLevel),
    #[error("credits must be strictly increasing with the level index ({0})")]
    CreditsNotIncreasing(ConsistencyLevel),
    #[error("sync periods must be non-decreasing with the level index ({0})")]
    PeriodsDecreasing(ConsistencyLevel),
    #[error("min threshold must be below max threshold at {0}")]
    ThresholdOrder(ConsistencyLevel),
}

/// Static mapping from level to credit sizes and maximal non-sync period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClPolicy {
    credits_by_level: BTreeMap<ConsistencyLevel, u64>,
    sync_period_by_level: BTreeMap<ConsistencyLevel, SimTime>,
    /// Per-replica, per-edge cap on resource credits (kbit/s).
    #[serde(default)]
    resource_credits_by_level: Option<BTreeMap<ConsistencyLevel, u64>>,
}

impl Default for ClPolicy {
    /// Execution credits per the add-flow table; periods of 50 ms per level.
    fn default() -> Self {
        let credits = ConsistencyLevel::all()
            .zip(ADD_FLOW_CREDITS)
            .collect::<BTreeMap<_, _>>();
        let periods = ConsistencyLevel::all()
            .map(|cl| (cl, 50 * cl.index() as SimTime))
            .collect();
        ClPolicy {
            credits_by_level: credits,
            sync_period_by_level: periods,
            resource_credits_by_level: None,
        }
    }
}

impl ClPolicy {
    pub fn new(
        credits_by_level: BTreeMap<ConsistencyLevel, u64>,
        sync_period_by_level: BTreeMap<ConsistencyLevel, SimTime>,
        resource_credits_by_level: Option<BTreeMap<ConsistencyLevel, u64>>,
    ) -> Result<Self, LevelError> {
        let policy = ClPolicy {
            credits_by_level,
            sync_period_by_level,
            resource_credits_by_level,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), LevelError> {
        let mut prev_credit = None;
        let mut prev_period = None;
        for cl in ConsistencyLevel::all() {
            let c = *self.credits_by_level.get(&cl).ok_or(LevelError::Missing(cl))?;
            let p = *self.sync_period_by_level.get(&cl).ok_or(LevelError::Missing(cl))?;
            if prev_credit.is_some_and(|pc| c <= pc) {
                return Err(LevelError::CreditsNotIncreasing(cl));
            }
            if prev_period.is_some_and(|pp| p < pp) {
                return Err(LevelError::PeriodsDecreasing(cl));
            }
            prev_credit = Some(c);
            prev_period = Some(p);
        }
        if let Some(rc) = &self.resource_credits_by_level {
            for cl in ConsistencyLevel::all() {
                rc.get(&cl).ok_or(LevelError::Missing(cl))?;
            }
        }
        Ok(())
    }

    pub fn credits(&self, cl: ConsistencyLevel) -> u64 {
        self.credits_by_level[&cl]
    }

    pub fn sync_period(&self, cl: ConsistencyLevel) -> SimTime {
        self.sync_period_by_level[&cl]
    }

    pub fn resource_credits(&self, cl: ConsistencyLevel) -> Option<u64> {
        self.resource_credits_by_level.as_ref().map(|m| m[&cl])
    }

    pub fn with_sync_periods(mut self, periods: BTreeMap<ConsistencyLevel, SimTime>) -> Self {
        self.sync_period_by_level = periods;
        self
    }

    pub fn with_credits(mut self, credits: BTreeMap<ConsistencyLevel, u64>) -> Self {
        self.credits_by_level = credits;
        self
    }

    pub fn with_resource_credits(mut self, rc: Option<BTreeMap<ConsistencyLevel, u64>>) -> Self {
        self.resource_credits_by_level = rc;
        self
    }
}

/// Per-level bounds on the accumulated cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMap {
    min_cost: BTreeMap<ConsistencyLevel, f64>,
    max_cost: BTreeMap<ConsistencyLevel, f64>,
}

impl ThresholdMap {
    pub fn new(
        min_cost: BTreeMap<ConsistencyLevel, f64>,
        max_cost: BTreeMap<ConsistencyLevel, f64>,
    ) -> Result<Self, LevelError> {
        let map = ThresholdMap { min_cost, max_cost };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), LevelError> {
        for cl in ConsistencyLevel::all() {
            let lo = *self.min_cost.get(&cl).ok_or(LevelError::Missing(cl))?;
            let hi = *self.max_cost.get(&cl).ok_or(LevelError::Missing(cl))?;
            if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                return Err(LevelError::ThresholdOrder(cl));
            }
        }
        Ok(())
    }

    /// The same band at every level.
    pub fn uniform(min: f64, max: f64) -> Result<Self, LevelError> {
        Self::new(
            ConsistencyLevel::all().map(|cl| (cl, min)).collect(),
            ConsistencyLevel::all().map(|cl| (cl, max)).collect(),
        )
    }

    /// Never triggers adaptation.
    pub fn disabled() -> Self {
        Self::uniform(f64::NEG_INFINITY, f64::INFINITY).expect("infinite band is ordered")
    }

    /// `max = 0.05 * credits * subopt_weight`, `min = 0.2 * max`.
    ///
    /// A non-positive weight collapses the band, so it falls back to a
    /// weight of one.
    pub fn derived(policy: &ClPolicy, subopt_weight: f64) -> Self {
        let w = if subopt_weight > 0.0 { subopt_weight } else { 1.0 };
        let max: BTreeMap<_, _> = ConsistencyLevel::all()
            .map(|cl| (cl, 0.05 * policy.credits(cl) as f64 * w))
            .collect();
        let min = max.iter().map(|(cl, m)| (*cl, 0.2 * m)).collect();
        ThresholdMap { min_cost: min, max_cost: max }
    }

    pub fn min(&self, cl: ConsistencyLevel) -> f64 {
        self.min_cost[&cl]
    }

    pub fn max(&self, cl: ConsistencyLevel) -> f64 {
        self.max_cost[&cl]
    }
}
