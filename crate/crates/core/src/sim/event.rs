use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::level::ConsistencyLevel;
use crate::net::EdgeId;
use crate::state::{ControllerId, SimTime};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    ClMod { level: ConsistencyLevel },
    TokenLease { from: ControllerId, edge: EdgeId, amount: u64 },
    FlowArrival,
    TimerExpiry { generation: u64 },
    ClusterSync,
}

impl EventKind {
    /// Tie-break among events at the same instant. Announcements land
    /// first, then work, then timers, and a synchronisation round last so it
    /// sees everything that happened at that instant.
    pub fn priority(&self) -> u8 {
        match self {
            EventKind::ClMod { .. } => 0,
            EventKind::TokenLease { .. } => 1,
            EventKind::FlowArrival => 2,
            EventKind::TimerExpiry { .. } => 3,
            EventKind::ClusterSync => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time: SimTime,
    /// The replica the event is addressed to (the initiator for a sync).
    pub controller: ControllerId,
    pub seq: u64,
    pub kind: EventKind,
}

impl SimEvent {
    fn key(&self) -> (SimTime, u8, ControllerId, u64) {
        (self.time, self.kind.priority(), self.controller, self.seq)
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap
        other.key().cmp(&self.key())
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Events in (time, kind priority, controller, insertion) order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, time: SimTime, controller: ControllerId, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent {
            time,
            controller,
            seq,
            kind,
        });
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_order() {
        let mut q = EventQueue::new();
        q.schedule(5, ControllerId(0), EventKind::ClusterSync);
        q.schedule(5, ControllerId(2), EventKind::FlowArrival);
        q.schedule(5, ControllerId(1), EventKind::FlowArrival);
        q.schedule(3, ControllerId(9), EventKind::TimerExpiry { generation: 0 });
        q.schedule(5, ControllerId(1), EventKind::FlowArrival);
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| (e.time, e.controller.0, e.seq)).collect();
        assert_eq!(order, vec![(3, 9, 3), (5, 1, 2), (5, 1, 4), (5, 2, 1), (5, 0, 0)]);
    }
}
