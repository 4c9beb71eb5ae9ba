//! Bandwidth-constrained least-cost routing.
//!
//! Edges that cannot fit the requested bandwidth are pruned, then the path
//! minimising the sum of edge costs is chosen. Ties are broken by hop count
//! and then by the lexicographically smallest vertex sequence, so every
//! replica (and the replay oracle) picks the same path from the same state.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::topology::{Bandwidth, EdgeId, Topology, VertexId};
use super::view::{EvictionDraws, FlowId, NetworkView};

const HOP_BITS: u32 = 20;

/// Packs (cost, hops) so integer order equals lexicographic pair order.
#[inline]
fn key(cost: u64, hops: u64) -> u64 {
    (cost << HOP_BITS) | hops
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRequest {
    pub flow_id: FlowId,
    pub src: VertexId,
    pub dst: VertexId,
    pub bandwidth: Bandwidth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub vertices: Vec<VertexId>,
    pub edges: Vec<EdgeId>,
    pub cost: u64,
}

impl Path {
    pub fn hops(&self) -> usize {
        self.edges.len()
    }
}

/// Reusable scratch space for repeated shortest-path queries on one topology.
#[derive(Debug, Clone)]
pub struct Router {
    dist: Vec<u64>,
    stamp: Vec<u32>,
    generation: u32,
    heap: BinaryHeap<Reverse<(u64, u32)>>,
}

impl Router {
    pub fn new(topology: &Topology) -> Self {
        let n = topology.vertex_count();
        Router {
            dist: vec![u64::MAX; n],
            stamp: vec![0; n],
            generation: 0,
            heap: BinaryHeap::new(),
        }
    }

    #[inline]
    fn get(&self, v: usize) -> u64 {
        if self.stamp[v] == self.generation {
            self.dist[v]
        } else {
            u64::MAX
        }
    }

    #[inline]
    fn set(&mut self, v: usize, d: u64) {
        self.stamp[v] = self.generation;
        self.dist[v] = d;
    }

    /// Least-cost feasible path from `src` to `dst` on `view`, or `None` if
    /// pruning disconnects them.
    pub fn constrained_dijkstra(
        &mut self,
        topology: &Topology,
        view: &NetworkView,
        src: VertexId,
        dst: VertexId,
        bandwidth: Bandwidth,
    ) -> Option<Path> {
        if self.dist.len() != topology.vertex_count() {
            *self = Router::new(topology);
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.fill(0);
            self.generation = 1;
        }
        let cap = topology.capacity().0;
        let fits = |e: EdgeId| view.edge(e).reserved().0 + bandwidth.0 <= cap;

        // Distances towards dst, so the forward walk can pick the smallest
        // next vertex among all optimal continuations.
        self.heap.clear();
        self.set(dst.index(), 0);
        self.heap.push(Reverse((0, dst.0)));
        let mut reached = false;
        while let Some(Reverse((d, u))) = self.heap.pop() {
            if d > self.get(u as usize) {
                continue;
            }
            if u == src.0 {
                reached = true;
                break;
            }
            for &(w, e) in topology.in_edges(VertexId(u)) {
                if !fits(e) {
                    continue;
                }
                let nd = d + key(view.edge(e).cost(), 1);
                if nd < self.get(w.index()) {
                    self.set(w.index(), nd);
                    self.heap.push(Reverse((nd, w.0)));
                }
            }
        }
        if !reached {
            return None;
        }

        let mut vertices = vec![src];
        let mut edges = Vec::new();
        let mut cost = 0;
        let mut u = src;
        while u != dst {
            let du = self.get(u.index());
            let (v, e) = topology
                .out_edges(u)
                .iter()
                .copied()
                .find(|&(v, e)| {
                    fits(e) && {
                        let dv = self.get(v.index());
                        dv != u64::MAX && dv + key(view.edge(e).cost(), 1) == du
                    }
                })
                .expect("optimal continuation exists on the shortest-path DAG");
            cost += view.edge(e).cost();
            vertices.push(v);
            edges.push(e);
            u = v;
        }
        Some(Path { vertices, edges, cost })
    }
}

/// A flow placed on a view.
#[derive(Debug, Clone, PartialEq)]
pub struct Admission {
    pub path: Path,
    /// Sum of edge costs along the path on the admitting view, before the
    /// reservation.
    pub local_cost: u64,
    /// (edge, evicted flow, its bandwidth), in path order.
    pub evictions: Vec<(EdgeId, FlowId, Bandwidth)>,
}

/// Routes `req` on `view`, reserves its bandwidth along the path and applies
/// the hot-edge eviction rule to every path edge. `None` if no feasible path
/// exists; the view is then unchanged.
pub fn admit(
    router: &mut Router,
    topology: &Topology,
    view: &mut NetworkView,
    req: &FlowRequest,
    draws: &EvictionDraws,
) -> Option<Admission> {
    let path = router.constrained_dijkstra(topology, view, req.src, req.dst, req.bandwidth)?;
    Some(place_path(topology, view, req, path, draws))
}

/// Reserves `req` along an already chosen `path`, edge by edge under the
/// eviction rule.
pub fn place_path(
    topology: &Topology,
    view: &mut NetworkView,
    req: &FlowRequest,
    path: Path,
    draws: &EvictionDraws,
) -> Admission {
    let local_cost = path.cost;
    let mut evictions = Vec::new();
    for e in &path.edges {
        if let Some((victim, bw)) = view.place(*e, req.flow_id, req.bandwidth, topology.capacity(), draws) {
            evictions.push((*e, victim, bw));
        }
    }
    Admission {
        path,
        local_cost,
        evictions,
    }
}
