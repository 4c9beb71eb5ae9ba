use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::topology::{Bandwidth, EdgeId, Topology};
use crate::state::{ControllerId, Delta, VersionVector};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct FlowId(pub u64);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

/// Flows placed on one directed edge, ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeState {
    flows: Vec<(FlowId, Bandwidth)>,
    reserved: Bandwidth,
}

impl EdgeState {
    /// Edge cost: the number of flows configured on the edge.
    pub fn cost(&self) -> u64 {
        self.flows.len() as u64
    }

    pub fn reserved(&self) -> Bandwidth {
        self.reserved
    }

    pub fn flows(&self) -> &[(FlowId, Bandwidth)] {
        &self.flows
    }

    fn position(&self, flow: FlowId) -> Result<usize, usize> {
        self.flows.binary_search_by_key(&flow, |(f, _)| *f)
    }

    pub fn contains(&self, flow: FlowId) -> bool {
        self.position(flow).is_ok()
    }

    /// Adds the flow unless already present. Returns whether it was added.
    pub fn reserve(&mut self, flow: FlowId, bw: Bandwidth) -> bool {
        match self.position(flow) {
            Ok(_) => false,
            Err(i) => {
                self.flows.insert(i, (flow, bw));
                self.reserved = self.reserved + bw;
                true
            }
        }
    }

    pub fn release(&mut self, flow: FlowId) -> Option<Bandwidth> {
        let i = self.position(flow).ok()?;
        Some(self.remove_at(i).1)
    }

    fn remove_at(&mut self, i: usize) -> (FlowId, Bandwidth) {
        let (f, bw) = self.flows.remove(i);
        self.reserved = Bandwidth(self.reserved.0 - bw.0);
        (f, bw)
    }

    fn consistent(&self) -> bool {
        self.flows.windows(2).all(|w| w[0].0 < w[1].0)
            && self.flows.iter().map(|(_, b)| b.0).sum::<u64>() == self.reserved.0
    }
}

/// One write on one edge. `seq` is the global order of the add-flow
/// execution that issued it; commits replay writes in `seq` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeOp {
    Reserve { bw: Bandwidth, seq: u64 },
    Release { seq: u64 },
}

impl EdgeOp {
    pub fn seq(&self) -> u64 {
        match self {
            EdgeOp::Reserve { seq, .. } | EdgeOp::Release { seq } => *seq,
        }
    }
}

/// Per-edge changes since the last synchronisation. The last write per
/// (edge, flow) wins when composing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ViewDelta {
    edges: BTreeMap<EdgeId, BTreeMap<FlowId, EdgeOp>>,
}

impl ViewDelta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reserve(&mut self, edge: EdgeId, flow: FlowId, bw: Bandwidth, seq: u64) {
        self.edges.entry(edge).or_default().insert(flow, EdgeOp::Reserve { bw, seq });
    }

    pub fn release(&mut self, edge: EdgeId, flow: FlowId, seq: u64) {
        self.edges.entry(edge).or_default().insert(flow, EdgeOp::Release { seq });
    }

    pub fn edge_ops(&self) -> impl Iterator<Item = (EdgeId, &BTreeMap<FlowId, EdgeOp>)> {
        self.edges.iter().map(|(e, ops)| (*e, ops))
    }

    pub fn ops_on(&self, edge: EdgeId) -> Option<&BTreeMap<FlowId, EdgeOp>> {
        self.edges.get(&edge)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Flows reserved by this delta on `edge`.
    pub fn reserving_flows(&self, edge: EdgeId) -> impl Iterator<Item = FlowId> + '_ {
        self.edges
            .get(&edge)
            .into_iter()
            .flat_map(|ops| ops.iter())
            .filter(|(_, op)| matches!(op, EdgeOp::Reserve { .. }))
            .map(|(f, _)| *f)
    }

    /// Every flow written anywhere in the delta.
    pub fn flows(&self) -> BTreeSet<FlowId> {
        self.edges.values().flat_map(|ops| ops.keys().copied()).collect()
    }

    /// Drops every write of the given flows, on all edges.
    pub fn remove_flows(&mut self, flows: &BTreeSet<FlowId>) {
        for ops in self.edges.values_mut() {
            ops.retain(|f, _| !flows.contains(f));
        }
        self.edges.retain(|_, ops| !ops.is_empty());
    }
}

impl Delta for ViewDelta {
    type Key = EdgeId;

    fn keys(&self) -> BTreeSet<EdgeId> {
        self.edges.keys().copied().collect()
    }

    fn compose(&mut self, later: &Self) {
        for (e, ops) in &later.edges {
            let mine = self.edges.entry(*e).or_default();
            for (f, op) in ops {
                mine.insert(*f, *op);
            }
        }
    }

    fn remove_keys(&mut self, keys: &BTreeSet<EdgeId>) {
        self.edges.retain(|e, _| !keys.contains(e));
    }

    fn restrict(&self, keys: &BTreeSet<EdgeId>) -> Self {
        ViewDelta {
            edges: self
                .edges
                .iter()
                .filter(|(e, _)| keys.contains(e))
                .map(|(e, ops)| (*e, ops.clone()))
                .collect(),
        }
    }

    fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Eviction randomness keyed by (flow, edge): placing the same flow on an
/// edge in the same state always evicts the same victim, whichever replica
/// (or the replay oracle) performs the placement.
#[derive(Debug, Clone)]
pub struct EvictionDraws {
    base: ChaCha8Rng,
}

impl EvictionDraws {
    pub fn new(seed: u64) -> Self {
        EvictionDraws {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng_for(&self, flow: FlowId, edge: EdgeId) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream((flow.0 << 24) ^ u64::from(edge.0));
        rng.set_word_pos(0);
        rng
    }
}

/// One controller's copy of the per-edge reservation state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkView {
    pub owner: ControllerId,
    pub version: VersionVector,
    edges: Vec<EdgeState>,
}

impl NetworkView {
    pub fn empty(topology: &Topology, owner: ControllerId) -> Self {
        NetworkView {
            owner,
            version: VersionVector::new(),
            edges: vec![EdgeState::default(); topology.edge_count()],
        }
    }

    pub fn edge(&self, e: EdgeId) -> &EdgeState {
        &self.edges[e.index()]
    }

    pub fn edge_mut(&mut self, e: EdgeId) -> &mut EdgeState {
        &mut self.edges[e.index()]
    }

    pub fn edges(&self) -> &[EdgeState] {
        &self.edges
    }

    pub fn set_edge(&mut self, e: EdgeId, state: EdgeState) {
        self.edges[e.index()] = state;
    }

    /// Overwrites one edge with `other`'s state, reusing the allocation.
    pub fn copy_edge_from(&mut self, other: &NetworkView, e: EdgeId) {
        self.edges[e.index()].clone_from(&other.edges[e.index()]);
    }

    pub fn path_cost(&self, path: &[EdgeId]) -> u64 {
        path.iter().map(|e| self.edge(*e).cost()).sum()
    }

    /// Whether every edge on `path` still fits `bw`.
    pub fn path_fits(&self, path: &[EdgeId], bw: Bandwidth, capacity: Bandwidth) -> bool {
        path.iter().all(|e| self.edge(*e).reserved().0 + bw.0 <= capacity.0)
    }

    /// Places `flow` on `edge` and applies the hot-edge eviction rule there.
    pub fn place(
        &mut self,
        edge: EdgeId,
        flow: FlowId,
        bw: Bandwidth,
        capacity: Bandwidth,
        draws: &EvictionDraws,
    ) -> Option<(FlowId, Bandwidth)> {
        if !self.edge_mut(edge).reserve(flow, bw) {
            return None;
        }
        evict_if_hot(self, edge, capacity, &mut draws.rng_for(flow, edge))
    }

    /// Commits a delta: per edge, writes are replayed in `seq` order and
    /// each reservation is followed by the eviction rule.
    pub fn commit(&mut self, delta: &ViewDelta, capacity: Bandwidth, draws: &EvictionDraws) {
        let mut ops: Vec<(u64, FlowId, EdgeOp)> = Vec::new();
        for (e, edge_ops) in delta.edge_ops() {
            ops.clear();
            ops.extend(edge_ops.iter().map(|(f, op)| (op.seq(), *f, *op)));
            ops.sort_unstable_by_key(|(seq, f, _)| (*seq, *f));
            for (_, f, op) in &ops {
                match op {
                    EdgeOp::Reserve { bw, .. } => {
                        self.place(e, *f, *bw, capacity, draws);
                    }
                    EdgeOp::Release { .. } => {
                        self.edge_mut(e).release(*f);
                    }
                }
            }
        }
    }

    /// Same flows on every edge; owner and version are ignored.
    pub fn same_state(&self, other: &NetworkView) -> bool {
        self.edges == other.edges
    }

    /// Cost equals flow count and reserved equals the sum of flow bandwidths
    /// on every edge.
    pub fn is_consistent(&self) -> bool {
        self.edges.iter().all(EdgeState::consistent)
    }

    pub fn max_reserved(&self) -> Bandwidth {
        self.edges.iter().map(|e| e.reserved()).max().unwrap_or_default()
    }
}

/// Whether `reserved` exceeds 80% of `capacity`.
pub fn is_hot(reserved: Bandwidth, capacity: Bandwidth) -> bool {
    reserved.0 * 5 > capacity.0 * 4
}

/// Removes one uniformly chosen flow from `edge` if its utilisation exceeds
/// 80%. Only this edge's reservation of the victim is released.
pub fn evict_if_hot<R: Rng + ?Sized>(
    view: &mut NetworkView,
    edge: EdgeId,
    capacity: Bandwidth,
    rng: &mut R,
) -> Option<(FlowId, Bandwidth)> {
    let state = view.edge_mut(edge);
    if !is_hot(state.reserved(), capacity) || state.flows.is_empty() {
        return None;
    }
    let idx = rng.gen_range(0..state.flows.len());
    Some(state.remove_at(idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mbps(x: u64) -> Bandwidth {
        Bandwidth::from_mbps(x)
    }

    #[test]
    fn edge_cost_tracks_flows() {
        let mut e = EdgeState::default();
        assert!(e.reserve(FlowId(1), mbps(5)));
        assert!(!e.reserve(FlowId(1), mbps(5)));
        e.reserve(FlowId(2), mbps(7));
        assert_eq!(e.cost(), 2);
        assert_eq!(e.reserved(), mbps(12));
        assert_eq!(e.release(FlowId(1)), Some(mbps(5)));
        assert_eq!(e.release(FlowId(1)), None);
        assert_eq!(e.cost(), 1);
        assert!(e.consistent());
    }

    #[test]
    fn eviction_threshold() {
        let t = Topology::grid(2, 2).unwrap();
        let cap = t.capacity();
        let e = EdgeId(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);

        let mut v = NetworkView::empty(&t, ControllerId(0));
        for i in 0..79 {
            v.edge_mut(e).reserve(FlowId(i), mbps(10));
        }
        assert!(evict_if_hot(&mut v, e, cap, &mut rng).is_none());
        for i in 79..85 {
            v.edge_mut(e).reserve(FlowId(i), mbps(10));
        }
        let (victim, bw) = evict_if_hot(&mut v, e, cap, &mut rng).unwrap();
        assert_eq!(bw, mbps(10));
        assert!(!v.edge(e).contains(victim));
        assert_eq!(v.edge(e).cost(), 84);

        // exactly 80% is not hot
        assert!(!is_hot(mbps(800), cap));
        assert!(is_hot(Bandwidth(800_001), cap));

        let mut single = NetworkView::empty(&t, ControllerId(0));
        single.edge_mut(e).reserve(FlowId(9), mbps(850));
        assert_eq!(evict_if_hot(&mut single, e, cap, &mut rng), Some((FlowId(9), mbps(850))));
    }

    #[test]
    fn delta_compose_is_last_write_wins() {
        let (e, f) = (EdgeId(3), FlowId(1));
        let mut d = ViewDelta::new();
        d.reserve(e, f, mbps(1), 0);
        let mut later = ViewDelta::new();
        later.release(e, f, 1);
        d.compose(&later);
        assert_eq!(d.ops_on(e).unwrap()[&f], EdgeOp::Release { seq: 1 });
    }

    #[test]
    fn commit_is_idempotent_below_threshold() {
        let t = Topology::grid(2, 3).unwrap();
        let draws = EvictionDraws::new(0);
        let mut d = ViewDelta::new();
        d.reserve(EdgeId(0), FlowId(1), mbps(3), 0);
        d.reserve(EdgeId(1), FlowId(1), mbps(3), 0);
        let mut v = NetworkView::empty(&t, ControllerId(0));
        v.commit(&d, t.capacity(), &draws);
        let once = v.clone();
        v.commit(&d, t.capacity(), &draws);
        assert!(v.same_state(&once));
        assert_eq!(v.edge(EdgeId(0)).reserved(), mbps(3));
        assert!(v.is_consistent());
    }

    #[test]
    fn keyed_draws_replay_identically() {
        let t = Topology::grid(2, 2).unwrap();
        let draws = EvictionDraws::new(42);
        let e = EdgeId(0);
        let mut a = NetworkView::empty(&t, ControllerId(0));
        for i in 0..80 {
            a.edge_mut(e).reserve(FlowId(i), mbps(10));
        }
        let mut b = a.clone();
        let va = a.place(e, FlowId(500), mbps(10), t.capacity(), &draws);
        let vb = b.place(e, FlowId(500), mbps(10), t.capacity(), &draws);
        assert!(va.is_some());
        assert_eq!(va, vb);
        assert!(a.same_state(&b));
    }

    #[test]
    fn commit_orders_writes_by_seq() {
        let t = Topology::grid(2, 2).unwrap();
        let draws = EvictionDraws::new(1);
        let e = EdgeId(0);
        let mut d = ViewDelta::new();
        d.release(e, FlowId(1), 5);
        d.reserve(e, FlowId(2), mbps(1), 3);
        let mut v = NetworkView::empty(&t, ControllerId(0));
        v.edge_mut(e).reserve(FlowId(1), mbps(1));
        v.commit(&d, t.capacity(), &draws);
        assert!(!v.edge(e).contains(FlowId(1)));
        assert!(v.edge(e).contains(FlowId(2)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Op {
            Place(u32, u64, u64),
            Release(u32, u64),
        }

        fn op() -> impl Strategy<Value = Op> {
            prop_oneof![
                3 => (0u32..8, 0u64..20, 1u64..40).prop_map(|(e, f, bw)| Op::Place(e, f, bw)),
                1 => (0u32..8, 0u64..20).prop_map(|(e, f)| Op::Release(e, f)),
            ]
        }

        fn delta(ops: &[Op]) -> ViewDelta {
            let mut d = ViewDelta::new();
            for (seq, op) in ops.iter().enumerate() {
                match *op {
                    Op::Place(e, f, bw) => d.reserve(EdgeId(e), FlowId(f), Bandwidth::from_mbps(bw), seq as u64),
                    Op::Release(e, f) => d.release(EdgeId(e), FlowId(f), seq as u64),
                }
            }
            d
        }

        proptest! {
            #[test]
            fn places_keep_edges_consistent(ops in proptest::collection::vec(op(), 0..200), seed in any::<u64>()) {
                let t = Topology::grid(2, 2).unwrap();
                let draws = EvictionDraws::new(seed);
                let mut v = NetworkView::empty(&t, ControllerId(0));
                for op in ops {
                    match op {
                        Op::Place(e, f, bw) => {
                            let before = v.edge(EdgeId(e)).cost();
                            let evicted = v.place(EdgeId(e), FlowId(f), mbps(bw), t.capacity(), &draws);
                            prop_assert!(v.edge(EdgeId(e)).cost() <= before + 1);
                            if let Some((victim, _)) = evicted {
                                prop_assert!(!v.edge(EdgeId(e)).contains(victim));
                            }
                        }
                        Op::Release(e, f) => {
                            v.edge_mut(EdgeId(e)).release(FlowId(f));
                            prop_assert!(!v.edge(EdgeId(e)).contains(FlowId(f)));
                        }
                    }
                    prop_assert!(v.is_consistent());
                }
            }

            #[test]
            fn commit_is_deterministic(ops in proptest::collection::vec(op(), 0..100), seed in any::<u64>()) {
                let t = Topology::grid(2, 2).unwrap();
                let draws = EvictionDraws::new(seed);
                let d = delta(&ops);
                let mut a = NetworkView::empty(&t, ControllerId(0));
                let mut b = NetworkView::empty(&t, ControllerId(1));
                a.commit(&d, t.capacity(), &draws);
                b.commit(&d, t.capacity(), &draws);
                prop_assert!(a.same_state(&b));
                prop_assert!(a.is_consistent());
            }
        }
    }
}
