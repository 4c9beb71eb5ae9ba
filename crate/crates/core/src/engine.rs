//! Per-replica state synchronisation and consistency-level adaptation.
//!
//! Each replica keeps a window of per-iteration costs (conflict plus
//! suboptimality). After every processed remote update the window sum is
//! compared against the thresholds of the active level and the level moves
//! at most one step.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::level::{ClPolicy, ConsistencyLevel, ThresholdMap};
use crate::net::{EdgeId, EdgeOp, FlowId, SuboptimalityRecord, ViewDelta};
use crate::state::{
    merge_fragment, ConflictResolver, ControllerId, Delta, Merged, Resolution, SimTime, StateError,
    StateFragment, StateId, UpdateQueue,
};

pub const DEFAULT_OBSERVATION_WINDOW: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionStrategy {
    /// Keep every write from both sides. Reservations commute, so the union
    /// converges regardless of merge order.
    #[default]
    Merge,
    LastWriterWins,
    PriorityById,
    UpdateInvalidation,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown resolution strategy `{0}`")]
pub struct UnknownStrategy(pub String);

impl FromStr for ResolutionStrategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "merge" => Ok(Self::Merge),
            "last-writer-wins" | "lww" => Ok(Self::LastWriterWins),
            "priority-by-id" => Ok(Self::PriorityById),
            "update-invalidation" => Ok(Self::UpdateInvalidation),
            other => Err(UnknownStrategy(other.to_string())),
        }
    }
}

impl fmt::Display for ResolutionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Merge => "merge",
            Self::LastWriterWins => "last-writer-wins",
            Self::PriorityById => "priority-by-id",
            Self::UpdateInvalidation => "update-invalidation",
        })
    }
}

/// Resolves contested edges of two concurrent view deltas. The cost is
/// `conflict_weight` per contested edge whatever the strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolver {
    pub strategy: ResolutionStrategy,
    pub conflict_weight: f64,
}

impl Resolver {
    pub fn new(strategy: ResolutionStrategy, conflict_weight: f64) -> Self {
        Resolver {
            strategy,
            conflict_weight,
        }
    }
}

fn last_seq(delta: &ViewDelta, edge: EdgeId) -> u64 {
    delta
        .ops_on(edge)
        .map(|ops| ops.values().map(EdgeOp::seq).max().unwrap_or(0))
        .unwrap_or(0)
}

impl ConflictResolver<ViewDelta> for Resolver {
    type Writer = FlowId;

    fn resolve(
        &self,
        local: &StateFragment<ViewDelta>,
        remote: &StateFragment<ViewDelta>,
        contested: &BTreeSet<EdgeId>,
    ) -> Result<Resolution<ViewDelta, FlowId>, StateError> {
        let cost = self.conflict_weight * contested.len() as f64;
        let mut invalidated = Vec::new();
        let payload = match self.strategy {
            ResolutionStrategy::Merge => {
                let mut p = local.payload.clone();
                p.compose(&remote.payload);
                p
            }
            ResolutionStrategy::LastWriterWins | ResolutionStrategy::PriorityById => {
                let (mut local_wins, mut remote_wins) = (BTreeSet::new(), BTreeSet::new());
                for e in contested {
                    let local_first = match self.strategy {
                        ResolutionStrategy::LastWriterWins => {
                            (last_seq(&local.payload, *e), local.timestamp, local.origin)
                                > (last_seq(&remote.payload, *e), remote.timestamp, remote.origin)
                        }
                        _ => local.origin < remote.origin,
                    };
                    if local_first {
                        local_wins.insert(*e);
                    } else {
                        remote_wins.insert(*e);
                    }
                }
                let mut p = local.payload.clone();
                p.remove_keys(&remote_wins);
                let mut r = remote.payload.clone();
                r.remove_keys(&local_wins);
                p.compose(&r);
                p
            }
            ResolutionStrategy::UpdateInvalidation => {
                let mut flows = BTreeSet::new();
                for e in contested {
                    flows.extend(local.payload.reserving_flows(*e));
                    flows.extend(remote.payload.reserving_flows(*e));
                }
                let mut p = local.payload.clone();
                p.compose(&remote.payload);
                p.remove_flows(&flows);
                invalidated.extend(flows);
                p
            }
        };
        Ok(Resolution {
            payload,
            cost,
            invalidated,
        })
    }
}

/// Resolves a detected conflict and returns the payload and its cost.
pub fn resolve_conflict(
    local: &StateFragment<ViewDelta>,
    remote: &StateFragment<ViewDelta>,
    strategy: ResolutionStrategy,
    conflict_weight: f64,
) -> Result<(Resolution<ViewDelta, FlowId>, usize), StateError> {
    let contested = crate::state::contested_keys(local, remote)?.unwrap_or_default();
    let res = Resolver::new(strategy, conflict_weight).resolve(local, remote, &contested)?;
    Ok((res, contested.len()))
}

/// One step towards the band: tighten above `max`, relax below `min`.
pub fn adapt_cl(measured_cost: f64, current: ConsistencyLevel, thresholds: &ThresholdMap) -> ConsistencyLevel {
    if measured_cost > thresholds.max(current) {
        current.tighten()
    } else if measured_cost < thresholds.min(current) {
        current.relax()
    } else {
        current
    }
}

/// `w_s * sum(1 - d_subopt)` over the scored records.
pub fn compute_suboptimality_cost<'a>(
    records: impl IntoIterator<Item = &'a SuboptimalityRecord>,
    subopt_weight: f64,
) -> f64 {
    subopt_weight * records.into_iter().filter_map(|r| r.suboptimality()).sum::<f64>()
}

/// Ring buffer of per-iteration costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostLedger {
    window: VecDeque<f64>,
    capacity: usize,
    accum: f64,
}

impl CostLedger {
    pub fn new(capacity: usize) -> Self {
        CostLedger {
            window: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
            accum: 0.0,
        }
    }

    pub fn push(&mut self, cost: f64) {
        self.window.push_back(cost);
        while self.window.len() > self.capacity {
            self.window.pop_front();
        }
        // Recomputed rather than adjusted so the sum is exact.
        self.accum = self.window.iter().sum();
    }

    pub fn accum(&self) -> f64 {
        self.accum
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.window.iter().copied()
    }
}

/// Bounds the non-synchronisation period of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncTimer {
    pub state_id: StateId,
    pub deadline: SimTime,
    pub last_sync: SimTime,
}

impl SyncTimer {
    pub fn new(state_id: StateId, now: SimTime, period: SimTime) -> Self {
        SyncTimer {
            state_id,
            deadline: now + period,
            last_sync: now,
        }
    }

    /// Restarts the period at `now`.
    pub fn synced(&mut self, now: SimTime, period: SimTime) {
        self.last_sync = now;
        self.deadline = now + period;
    }

    /// Moves the deadline without starting a new period.
    pub fn rearm(&mut self, now: SimTime, period: SimTime) {
        self.deadline = (now + period).min(self.last_sync + period).max(now);
    }

    pub fn expired(&self, now: SimTime) -> bool {
        now >= self.deadline
    }
}

/// Outcome of one adaptation iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Iteration {
    pub cost: f64,
    pub accum: f64,
    pub change: Option<ClChange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClChange {
    pub from: ConsistencyLevel,
    pub to: ConsistencyLevel,
}

/// Cluster events a replica hands to the transport.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterEvent {
    Sync { origin: ControllerId, fragment: StateFragment<ViewDelta> },
    ClMod { origin: ControllerId, level: ConsistencyLevel },
}

/// Result of processing one remote update.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteUpdate {
    /// `None` when the fragment was quarantined.
    pub merged: Option<Merged<ViewDelta, FlowId>>,
    pub conflict_cost: f64,
    pub subopt_cost: f64,
    pub iteration: Iteration,
    pub events: Vec<ClusterEvent>,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub observation_window: usize,
    pub conflict_weight: f64,
    pub subopt_weight: f64,
    pub thresholds: ThresholdMap,
    pub strategy: ResolutionStrategy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            observation_window: DEFAULT_OBSERVATION_WINDOW,
            conflict_weight: 1.0,
            subopt_weight: 1.0,
            thresholds: ThresholdMap::disabled(),
            strategy: ResolutionStrategy::default(),
        }
    }
}

/// Adaptation state of one replica for one synchronised state.
#[derive(Debug, Clone)]
pub struct ReplicaEngine {
    pub id: ControllerId,
    cl: ConsistencyLevel,
    config: EngineConfig,
    ledger: CostLedger,
    pub timer: SyncTimer,
    pub queue: UpdateQueue<ViewDelta>,
    quarantined: Vec<StateFragment<ViewDelta>>,
}

impl ReplicaEngine {
    pub fn new(
        id: ControllerId,
        state_id: StateId,
        cl: ConsistencyLevel,
        config: EngineConfig,
        policy: &ClPolicy,
        now: SimTime,
    ) -> Self {
        ReplicaEngine {
            id,
            cl,
            ledger: CostLedger::new(config.observation_window),
            config,
            timer: SyncTimer::new(state_id, now, policy.sync_period(cl)),
            queue: UpdateQueue::new(),
            quarantined: Vec::new(),
        }
    }

    pub fn cl(&self) -> ConsistencyLevel {
        self.cl
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn quarantined(&self) -> &[StateFragment<ViewDelta>] {
        &self.quarantined
    }

    pub fn resolver(&self) -> Resolver {
        Resolver::new(self.config.strategy, self.config.conflict_weight)
    }

    /// Records one iteration's costs and adapts the level. A change also
    /// shortens or extends the running timer.
    pub fn account(&mut self, conflict_cost: f64, subopt_cost: f64, policy: &ClPolicy, now: SimTime) -> Iteration {
        let cost = conflict_cost + subopt_cost;
        self.ledger.push(cost);
        let accum = self.ledger.accum();
        let next = adapt_cl(accum, self.cl, &self.config.thresholds);
        let change = (next != self.cl).then_some(ClChange { from: self.cl, to: next });
        if change.is_some() {
            self.cl = next;
            self.timer.rearm(now, policy.sync_period(next));
        }
        Iteration { cost, accum, change }
    }

    /// Applies a level announced by a peer.
    pub fn apply_cl_mod(&mut self, level: ConsistencyLevel, policy: &ClPolicy, now: SimTime) {
        if level != self.cl {
            self.cl = level;
            self.timer.rearm(now, policy.sync_period(level));
        }
    }

    /// Processes the oldest queued remote fragment against `local`: merge,
    /// conflict cost, suboptimality cost, ledger update and adaptation. A
    /// level change yields a CL_MOD event. A fragment the resolver cannot
    /// handle is quarantined and charged the current maximum cost.
    pub fn on_remote_update(
        &mut self,
        local: &StateFragment<ViewDelta>,
        subopt_records: &[SuboptimalityRecord],
        policy: &ClPolicy,
        now: SimTime,
    ) -> Option<RemoteUpdate> {
        let remote = self.queue.pop()?;
        let resolver = self.resolver();
        let (merged, conflict_cost) = match merge_fragment(local, &remote, &resolver) {
            Ok(m) => {
                let c = m.conflict.as_ref().map_or(0.0, |c| c.cost);
                (Some(m), c)
            }
            Err(err) => {
                log::warn!("replica {}: quarantined fragment from {}: {err}", self.id, remote.origin);
                self.quarantined.push(remote);
                (None, self.config.thresholds.max(self.cl))
            }
        };
        let subopt_cost = compute_suboptimality_cost(subopt_records, self.config.subopt_weight);
        let iteration = self.account(conflict_cost, subopt_cost, policy, now);
        let events = iteration
            .change
            .map(|c| ClusterEvent::ClMod {
                origin: self.id,
                level: c.to,
            })
            .into_iter()
            .collect();
        Some(RemoteUpdate {
            merged,
            conflict_cost,
            subopt_cost,
            iteration,
            events,
        })
    }

    /// Timer expiry: a dirty state is broadcast as SYNC. The timer restarts
    /// either way with the period of the active level.
    pub fn on_timer_elapsed(
        &mut self,
        pending: Option<&StateFragment<ViewDelta>>,
        policy: &ClPolicy,
        now: SimTime,
    ) -> Option<ClusterEvent> {
        self.timer.synced(now, policy.sync_period(self.cl));
        pending.filter(|f| !f.payload.is_empty()).map(|f| ClusterEvent::Sync {
            origin: self.id,
            fragment: f.clone(),
        })
    }
}
