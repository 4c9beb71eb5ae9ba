use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineConfig, ResolutionStrategy, DEFAULT_OBSERVATION_WINDOW};
use crate::level::{ClPolicy, ConsistencyLevel, LevelError, ThresholdMap};
use crate::net::{Bandwidth, Neighborhood};
use crate::state::SimTime;

pub const MAX_CONTROLLERS: u16 = 15;
pub const GRID_RANGE: std::ops::RangeInclusive<u32> = 5..=25;
pub const MAX_TRAFFIC_MBPS: u64 = 30;

/// Per-flow bandwidth drawn uniformly from `[lo, hi]` Mbps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficRange {
    pub lo: u64,
    pub hi: u64,
}

impl TrafficRange {
    pub fn new(lo: u64, hi: u64) -> Self {
        TrafficRange { lo, hi }
    }

    pub fn lo_bw(&self) -> Bandwidth {
        Bandwidth::from_mbps(self.lo)
    }

    pub fn hi_bw(&self) -> Bandwidth {
        Bandwidth::from_mbps(self.hi)
    }
}

impl fmt::Display for TrafficRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClMode {
    Fixed(ConsistencyLevel),
    /// Starts at `initial` and follows the thresholds.
    Adaptive { initial: ConsistencyLevel },
}

impl ClMode {
    pub fn initial(&self) -> ConsistencyLevel {
        match *self {
            ClMode::Fixed(cl) | ClMode::Adaptive { initial: cl } => cl,
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, ClMode::Adaptive { .. })
    }
}

impl fmt::Display for ClMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClMode::Fixed(cl) => write!(f, "{}", cl.index()),
            ClMode::Adaptive { initial } => write!(f, "adaptive@{}", initial.index()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CreditMode {
    /// Per-operation execution counts.
    #[default]
    ExecutionCredit,
    /// Per-edge bandwidth escrow.
    ResourceCredit,
}

/// When credit exhaustion starts a cluster-wide synchronisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncTrigger {
    /// Once every replica has exhausted its credits (or run out of work).
    /// Replicas that exhaust early stall until the round.
    #[default]
    AllExhausted,
    /// As soon as any replica exhausts.
    FirstExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSetting {
    /// `max = 0.05 * credits * w_s`, `min = 0.2 * max`.
    Derived,
    Disabled,
    Explicit(ThresholdMap),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_controllers: u16,
    pub grid_size: u32,
    pub neighborhood: Neighborhood,
    pub traffic: TrafficRange,
    pub cl: ClMode,
    pub total_requests: u64,
    pub seed: u64,
    pub mode: CreditMode,
    pub trigger: SyncTrigger,
    pub policy: ClPolicy,
    pub thresholds: ThresholdSetting,
    pub observation_window: usize,
    pub conflict_weight: f64,
    pub subopt_weight: f64,
    pub strategy: ResolutionStrategy,
    pub propagation_delay: SimTime,
    /// Simulated time one add-flow execution takes.
    pub service_time: SimTime,
    /// Cross-check views against the replay after every round. Slow.
    pub check_invariants: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_controllers: 3,
            grid_size: 25,
            neighborhood: Neighborhood::VonNeumann,
            traffic: TrafficRange::new(1, 10),
            cl: ClMode::Fixed(ConsistencyLevel::MOST_RELAXED),
            total_requests: 20_000,
            seed: 0,
            mode: CreditMode::ExecutionCredit,
            trigger: SyncTrigger::AllExhausted,
            policy: ClPolicy::default(),
            thresholds: ThresholdSetting::Derived,
            observation_window: DEFAULT_OBSERVATION_WINDOW,
            conflict_weight: 1.0,
            subopt_weight: 1.0,
            strategy: ResolutionStrategy::Merge,
            propagation_delay: 0,
            service_time: 1,
            check_invariants: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("n_controllers must be in [1, {MAX_CONTROLLERS}], got {0}")]
    Controllers(u16),
    #[error("grid_size must be in [5, 25], got {0}")]
    Grid(u32),
    #[error("traffic range [{lo}, {hi}] Mbps must satisfy 1 <= lo <= hi <= {MAX_TRAFFIC_MBPS}")]
    Traffic { lo: u64, hi: u64 },
    #[error("total_requests must be at least 1")]
    NoRequests,
    #[error("observation_window must be at least 1")]
    Window,
    #[error("service_time must be at least 1 ms")]
    ServiceTime,
    #[error("weights must be finite and non-negative")]
    Weights,
    #[error(transparent)]
    Level(#[from] LevelError),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=MAX_CONTROLLERS).contains(&self.n_controllers) {
            return Err(ConfigError::Controllers(self.n_controllers));
        }
        if !GRID_RANGE.contains(&self.grid_size) {
            return Err(ConfigError::Grid(self.grid_size));
        }
        let TrafficRange { lo, hi } = self.traffic;
        if lo < 1 || hi > MAX_TRAFFIC_MBPS || lo > hi {
            return Err(ConfigError::Traffic { lo, hi });
        }
        if self.total_requests == 0 {
            return Err(ConfigError::NoRequests);
        }
        if self.observation_window == 0 {
            return Err(ConfigError::Window);
        }
        if self.service_time == 0 {
            return Err(ConfigError::ServiceTime);
        }
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(self.conflict_weight) || !ok(self.subopt_weight) {
            return Err(ConfigError::Weights);
        }
        self.policy.validate()?;
        if let ThresholdSetting::Explicit(t) = &self.thresholds {
            t.validate()?;
        }
        Ok(())
    }

    /// Thresholds in force. A fixed level disables adaptation.
    pub fn effective_thresholds(&self) -> ThresholdMap {
        if !self.cl.is_adaptive() {
            return ThresholdMap::disabled();
        }
        match &self.thresholds {
            ThresholdSetting::Derived => ThresholdMap::derived(&self.policy, self.subopt_weight),
            ThresholdSetting::Disabled => ThresholdMap::disabled(),
            ThresholdSetting::Explicit(t) => t.clone(),
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            observation_window: self.observation_window,
            conflict_weight: self.conflict_weight,
            subopt_weight: self.subopt_weight,
            thresholds: self.effective_thresholds(),
            strategy: self.strategy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let bad = |f: fn(&mut SimConfig)| {
            let mut c = SimConfig::default();
            f(&mut c);
            c.validate().unwrap_err()
        };
        assert_eq!(bad(|c| c.n_controllers = 16), ConfigError::Controllers(16));
        assert_eq!(bad(|c| c.n_controllers = 0), ConfigError::Controllers(0));
        assert_eq!(bad(|c| c.grid_size = 4), ConfigError::Grid(4));
        assert_eq!(bad(|c| c.traffic = TrafficRange::new(0, 10)), ConfigError::Traffic { lo: 0, hi: 10 });
        assert_eq!(bad(|c| c.traffic = TrafficRange::new(1, 31)), ConfigError::Traffic { lo: 1, hi: 31 });
        assert_eq!(bad(|c| c.total_requests = 0), ConfigError::NoRequests);
    }

    #[test]
    fn fixed_level_disables_adaptation() {
        let c = SimConfig::default();
        assert_eq!(c.effective_thresholds(), ThresholdMap::disabled());
        let a = SimConfig {
            cl: ClMode::Adaptive {
                initial: ConsistencyLevel::new(6).unwrap(),
            },
            ..SimConfig::default()
        };
        assert_eq!(a.effective_thresholds(), ThresholdMap::derived(&a.policy, 1.0));
    }
}
