//! Versioned state fragments exchanged between controller replicas.
//!
//! Every replica accumulates its local modifications of a shared state as a
//! delta, stamped with a [`VersionVector`]. When fragments from two replicas
//! meet, the vectors decide whether one causally follows the other or whether
//! they were produced concurrently. Concurrent fragments that write disjoint
//! sub-keys are merged by union; overlapping ones are handed to a
//! [`ConflictResolver`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in milliseconds.
pub type SimTime = u64;

/// Index of a controller replica in `[0, N)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ControllerId(pub u16);

impl ControllerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ControllerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K{}", self.0)
    }
}

/// Causal relation of one version vector to another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Causality {
    Before,
    After,
    Equal,
    Concurrent,
}

/// Per-replica update counters. Absent entries read as zero.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VersionVector {
    entries: BTreeMap<ControllerId, u64>,
}

impl VersionVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (ControllerId, u64)>) -> Self {
        let mut vv = Self::new();
        for (id, counter) in entries {
            vv.set(id, counter);
        }
        vv
    }

    pub fn get(&self, id: ControllerId) -> u64 {
        self.entries.get(&id).copied().unwrap_or(0)
    }

    fn set(&mut self, id: ControllerId, counter: u64) {
        if counter == 0 {
            self.entries.remove(&id);
        } else {
            self.entries.insert(id, counter);
        }
    }

    /// Records one more local update by `id` and returns the new counter.
    pub fn increment(&mut self, id: ControllerId) -> u64 {
        let next = self.get(id) + 1;
        self.entries.insert(id, next);
        next
    }

    pub fn iter(&self) -> impl Iterator<Item = (ControllerId, u64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    /// Relation of `self` to `other`: `Before` means `self` is dominated.
    pub fn compare(&self, other: &VersionVector) -> Causality {
        let mut less = false;
        let mut greater = false;
        let keys: BTreeSet<ControllerId> = self
            .entries
            .keys()
            .chain(other.entries.keys())
            .copied()
            .collect();
        for k in keys {
            let (a, b) = (self.get(k), other.get(k));
            if a < b {
                less = true;
            } else if a > b {
                greater = true;
            }
            if less && greater {
                return Causality::Concurrent;
            }
        }
        match (less, greater) {
            (false, false) => Causality::Equal,
            (true, false) => Causality::Before,
            (false, true) => Causality::After,
            (true, true) => Causality::Concurrent,
        }
    }

    /// Componentwise maximum.
    pub fn merge(&self, other: &VersionVector) -> VersionVector {
        let mut out = self.clone();
        out.merge_in(other);
        out
    }

    pub fn merge_in(&mut self, other: &VersionVector) {
        for (k, v) in other.iter() {
            if v > self.get(k) {
                self.entries.insert(k, v);
            }
        }
    }

    /// True iff `self` is at least `other` on every entry.
    pub fn dominates(&self, other: &VersionVector) -> bool {
        matches!(self.compare(other), Causality::After | Causality::Equal)
    }
}

// Zero entries are never stored, so structural equality is semantic equality.
impl PartialEq for VersionVector {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Eq for VersionVector {}

/// Free-function form of [`VersionVector::compare`].
pub fn vv_compare(a: &VersionVector, b: &VersionVector) -> Causality {
    a.compare(b)
}

/// Free-function form of [`VersionVector::merge`].
pub fn vv_merge(a: &VersionVector, b: &VersionVector) -> VersionVector {
    a.merge(b)
}

/// A payload expressed as a change relative to the last synchronised state.
///
/// Deltas are keyed by sub-key (for network views: the edge). Two deltas
/// conflict only if they are concurrent and touch a common sub-key.
pub trait Delta: Clone + PartialEq + fmt::Debug {
    type Key: Ord + Clone + fmt::Debug;

    fn keys(&self) -> BTreeSet<Self::Key>;

    /// Applies `later` on top of `self`.
    fn compose(&mut self, later: &Self);

    /// Drops every entry under the given sub-keys.
    fn remove_keys(&mut self, keys: &BTreeSet<Self::Key>);

    /// Keeps only the entries under the given sub-keys.
    fn restrict(&self, keys: &BTreeSet<Self::Key>) -> Self;

    fn is_empty(&self) -> bool;
}

/// Identifier of a replicated state object.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub String);

impl StateId {
    pub fn new(s: impl Into<String>) -> Self {
        StateId(s.into())
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A versioned update of state `state_id` produced at `origin`.
///
/// `timestamp` is the simulated time of the last write folded into the
/// payload; last-writer-wins resolution compares it.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFragment<D> {
    pub state_id: StateId,
    pub payload: D,
    pub version: VersionVector,
    pub origin: ControllerId,
    pub timestamp: SimTime,
}

impl<D: Delta> StateFragment<D> {
    pub fn new(
        state_id: StateId,
        payload: D,
        version: VersionVector,
        origin: ControllerId,
        timestamp: SimTime,
    ) -> Self {
        Self {
            state_id,
            payload,
            version,
            origin,
            timestamp,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("fragments refer to different states ({local} vs {remote})")]
    StateMismatch { local: StateId, remote: StateId },
    #[error("conflict resolution failed: {0}")]
    Resolution(String),
}

/// Sub-keys written by both fragments, or `None` if the fragments are
/// causally ordered (or identical in version).
pub fn contested_keys<D: Delta>(
    local: &StateFragment<D>,
    remote: &StateFragment<D>,
) -> Result<Option<BTreeSet<D::Key>>, StateError> {
    check_same_state(local, remote)?;
    if local.version.compare(&remote.version) != Causality::Concurrent {
        return Ok(None);
    }
    let lk = local.payload.keys();
    let overlap: BTreeSet<D::Key> = remote
        .payload
        .keys()
        .into_iter()
        .filter(|k| lk.contains(k))
        .collect();
    Ok(Some(overlap))
}

/// True iff the fragments are concurrent and write an overlapping sub-key.
pub fn detect_conflict<D: Delta>(
    local: &StateFragment<D>,
    remote: &StateFragment<D>,
) -> Result<bool, StateError> {
    Ok(contested_keys(local, remote)?.is_some_and(|k| !k.is_empty()))
}

fn check_same_state<D>(local: &StateFragment<D>, remote: &StateFragment<D>) -> Result<(), StateError> {
    if local.state_id != remote.state_id {
        return Err(StateError::StateMismatch {
            local: local.state_id.clone(),
            remote: remote.state_id.clone(),
        });
    }
    Ok(())
}

/// Outcome of resolving a conflict between two concurrent fragments.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution<D: Delta, W> {
    pub payload: D,
    pub cost: f64,
    /// Writers (e.g. flow reservations) whose updates were rolled back and
    /// must be re-issued.
    pub invalidated: Vec<W>,
}

/// Decides the merged payload for concurrent fragments with contested keys.
pub trait ConflictResolver<D: Delta> {
    type Writer: Clone + fmt::Debug;

    fn resolve(
        &self,
        local: &StateFragment<D>,
        remote: &StateFragment<D>,
        contested: &BTreeSet<D::Key>,
    ) -> Result<Resolution<D, Self::Writer>, StateError>;
}

/// Result of [`merge_fragment`].
#[derive(Debug, Clone, PartialEq)]
pub struct Merged<D: Delta, W> {
    pub fragment: StateFragment<D>,
    pub causality: Causality,
    /// Present iff a conflict was detected and resolved.
    pub conflict: Option<ConflictOutcome<W>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConflictOutcome<W> {
    pub contested: usize,
    pub cost: f64,
    pub invalidated: Vec<W>,
}

/// Merges `remote` into `local`. The returned fragment keeps `local.origin`
/// and carries the join of both version vectors.
pub fn merge_fragment<D: Delta, R: ConflictResolver<D>>(
    local: &StateFragment<D>,
    remote: &StateFragment<D>,
    resolver: &R,
) -> Result<Merged<D, R::Writer>, StateError> {
    check_same_state(local, remote)?;
    let causality = remote.version.compare(&local.version);
    let mut conflict = None;
    let payload = match causality {
        Causality::Before | Causality::Equal => local.payload.clone(),
        Causality::After => {
            let mut p = local.payload.clone();
            p.compose(&remote.payload);
            p
        }
        Causality::Concurrent => {
            let contested = contested_keys(local, remote)?.unwrap_or_default();
            if contested.is_empty() {
                let mut p = local.payload.clone();
                p.compose(&remote.payload);
                p
            } else {
                let res = resolver.resolve(local, remote, &contested)?;
                conflict = Some(ConflictOutcome {
                    contested: contested.len(),
                    cost: res.cost,
                    invalidated: res.invalidated,
                });
                res.payload
            }
        }
    };
    Ok(Merged {
        fragment: StateFragment {
            state_id: local.state_id.clone(),
            payload,
            version: local.version.merge(&remote.version),
            origin: local.origin,
            timestamp: local.timestamp.max(remote.timestamp),
        },
        causality,
        conflict,
    })
}

/// FIFO buffer of fragments awaiting processing.
#[derive(Debug, Clone)]
pub struct UpdateQueue<D> {
    pending: VecDeque<StateFragment<D>>,
}

impl<D> Default for UpdateQueue<D> {
    fn default() -> Self {
        Self {
            pending: VecDeque::new(),
        }
    }
}

impl<D> UpdateQueue<D> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, fragment: StateFragment<D>) {
        self.pending.push_back(fragment);
    }

    pub fn pop(&mut self) -> Option<StateFragment<D>> {
        self.pending.pop_front()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}
