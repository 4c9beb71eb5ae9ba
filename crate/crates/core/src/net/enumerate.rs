//! Exhaustive reference search, for checking the router on small grids.

use rand::Rng;

use super::topology::{Bandwidth, EdgeId, Topology, VertexId};
use super::view::{FlowId, NetworkView};
use crate::state::ControllerId;

/// Least-cost feasible simple path by depth-first enumeration of every
/// simple path, ordered by (cost, hops, vertex sequence). Exponential; keep
/// grids at 4x4 or below.
pub fn enumerate_least_cost(
    topology: &Topology,
    view: &NetworkView,
    src: VertexId,
    dst: VertexId,
    bw: Bandwidth,
) -> Option<(u64, Vec<VertexId>)> {
    fn dfs(
        t: &Topology,
        view: &NetworkView,
        bw: Bandwidth,
        dst: VertexId,
        stack: &mut Vec<VertexId>,
        cost: u64,
        best: &mut Option<(u64, usize, Vec<VertexId>)>,
    ) {
        let u = *stack.last().expect("stack starts with the source");
        if u == dst {
            let cand = (cost, stack.len(), stack.clone());
            if best.as_ref().is_none_or(|b| cand < *b) {
                *best = Some(cand);
            }
            return;
        }
        for &(v, e) in t.out_edges(u) {
            if stack.contains(&v) || view.edge(e).reserved().0 + bw.0 > t.capacity().0 {
                continue;
            }
            stack.push(v);
            dfs(t, view, bw, dst, stack, cost + view.edge(e).cost(), best);
            stack.pop();
        }
    }
    let mut best = None;
    dfs(topology, view, bw, dst, &mut vec![src], 0, &mut best);
    best.map(|(c, _, p)| (c, p))
}

/// A view with 0 to 3 flows per edge, mostly small with the odd 400 Mbps
/// flow so that pruning matters.
pub fn random_loaded_view<R: Rng>(t: &Topology, rng: &mut R) -> NetworkView {
    let mut v = NetworkView::empty(t, ControllerId(0));
    let mut next = 0;
    for e in 0..t.edge_count() as u32 {
        let flows = rng.gen_range(0..4);
        for _ in 0..flows {
            let bw = if rng.gen_bool(0.15) { 400 } else { rng.gen_range(1..60) };
            v.edge_mut(EdgeId(e)).reserve(FlowId(next), Bandwidth::from_mbps(bw));
            next += 1;
        }
    }
    v
}
