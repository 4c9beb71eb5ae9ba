//! Discrete-event simulation of N replicas routing a shared workload.
//!
//! Requests are dealt round-robin and each replica serves its queue back to
//! back, one add-flow per `service_time`, on its own view. Every add-flow
//! spends one execution credit. When the trigger fires, a synchronisation
//! round merges the replicas' deltas, scores the closed period against the
//! serialised replay, feeds the costs to each replica's engine, and starts
//! the next period from the merged view with fresh credits.

pub mod config;
pub mod event;
pub mod stats;
pub mod sweep;

use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{ClMode, ConfigError, CreditMode, SimConfig, SyncTrigger, ThresholdSetting, TrafficRange};
pub use stats::{nearest_rank, spearman, Correlation, RecordStats};

use crate::credit::{lease_tokens, refresh_resource, Escrow, ExecutionCreditAccount, ResourceCreditAccount};
use crate::engine::{compute_suboptimality_cost, ReplicaEngine, ResolutionStrategy};
use crate::level::ConsistencyLevel;
use crate::net::{
    apply_entry, place_path, serialized_oracle, Bandwidth, EdgeId, EvictionDraws, FlowId, FlowRequest, LiveOutcome,
    NetworkView, Path, PeriodEntry, Router, SuboptimalityRecord, Topology, TopologyError, VertexId, ViewDelta,
};
use crate::state::{merge_fragment, ControllerId, Delta, SimTime, StateFragment, StateId};
use event::{EventKind, EventQueue};

pub const STATE_ID: &str = "network-view";

pub const STREAM_WORKLOAD: u64 = 1;
pub const STREAM_EVICTION: u64 = 2;

/// Attempts for a request whose escrow reservation fails: the first failure
/// synchronises and retries once from the merged view.
const MAX_ATTEMPTS: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    State(#[from] crate::state::StateError),
}

/// Independent generator for one named use of the run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Eviction draws of a run, keyed by `(flow, edge)`.
pub fn eviction_draws(seed: u64) -> EvictionDraws {
    EvictionDraws::new(stream_rng(seed, STREAM_EVICTION).gen())
}

/// Uniform source/destination pairs (distinct) and uniform bandwidth in
/// the traffic range at kbit/s granularity.
pub fn generate_workload(topology: &Topology, traffic: TrafficRange, total: u64, seed: u64) -> Vec<FlowRequest> {
    let mut rng = stream_rng(seed, STREAM_WORKLOAD);
    let v = topology.vertex_count() as u32;
    (0..total)
        .map(|i| {
            let src = rng.gen_range(0..v);
            let dst = (src + rng.gen_range(1..v)) % v;
            let bw = rng.gen_range(traffic.lo_bw().0..=traffic.hi_bw().0);
            FlowRequest {
                flow_id: FlowId(i),
                src: VertexId(src),
                dst: VertexId(dst),
                bandwidth: Bandwidth(bw),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_controllers: u16,
    pub grid_size: u32,
    pub traffic_lo: u64,
    pub traffic_hi: u64,
    pub cl: String,
    pub total_requests: u64,
    pub seed: u64,
    #[serde(flatten)]
    pub stats: RecordStats,
    pub sync_rounds: u64,
    pub timer_syncs: u64,
    pub conflicts: u64,
    pub contested_edges: u64,
    pub messages: u64,
    pub invalidated: u64,
    pub token_leases: u64,
    pub cl_changes: u64,
    pub final_cl: Vec<u8>,
    pub invariant_violations: Vec<String>,
}

/// One synchronisation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub period_index: u64,
    pub time: SimTime,
    /// Add-flow executions in the closed period.
    pub entries: usize,
    pub elapsed: SimTime,
    pub conflicts: u64,
    /// Levels after adaptation, per replica.
    pub levels: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub records: Vec<SuboptimalityRecord>,
    pub rounds: Vec<RoundTrace>,
    /// The agreed view after the final round.
    pub final_view: NetworkView,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    req: FlowRequest,
    attempts: u8,
}

#[derive(Debug)]
struct Replica {
    id: ControllerId,
    view: NetworkView,
    queue: VecDeque<Pending>,
    delta: ViewDelta,
    last_write: SimTime,
    credits: ExecutionCreditAccount,
    engine: ReplicaEngine,
    stalled: bool,
    busy: bool,
    timer_gen: u64,
    period_cl: ConsistencyLevel,
}

#[derive(Debug, Default)]
struct Counters {
    sync_rounds: u64,
    timer_syncs: u64,
    conflicts: u64,
    contested: u64,
    messages: u64,
    invalidated: u64,
    token_leases: u64,
    cl_changes: u64,
}

struct Cluster<'c> {
    cfg: &'c SimConfig,
    topo: Topology,
    router: Router,
    draws: EvictionDraws,
    global: NetworkView,
    replicas: Vec<Replica>,
    /// `[edge][controller]`, resource-credit mode only.
    escrow: Vec<Vec<ResourceCreditAccount>>,
    events: EventQueue,
    log: Vec<PeriodEntry>,
    next_seq: u64,
    period_index: u64,
    last_sync: SimTime,
    sync_pending: bool,
    remaining: u64,
    records: Vec<SuboptimalityRecord>,
    rounds: Vec<RoundTrace>,
    counters: Counters,
    violations: Vec<String>,
    requeued: HashSet<FlowId>,
}

/// Runs one configuration to completion.
pub fn run(cfg: &SimConfig) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let mut cluster = Cluster::new(cfg)?;
    cluster.run()?;
    Ok(cluster.finish())
}

impl<'c> Cluster<'c> {
    fn new(cfg: &'c SimConfig) -> Result<Self, SimError> {
        let topo = Topology::grid_with(
            cfg.grid_size,
            cfg.grid_size,
            cfg.neighborhood,
            crate::net::LINK_CAPACITY,
        )?;
        let workload = generate_workload(&topo, cfg.traffic, cfg.total_requests, cfg.seed);
        let n = cfg.n_controllers as usize;
        let cl = cfg.cl.initial();
        let global = NetworkView::empty(&topo, ControllerId(0));
        let mut replicas: Vec<Replica> = (0..n)
            .map(|i| {
                let id = ControllerId(i as u16);
                let mut view = global.clone();
                view.owner = id;
                Replica {
                    id,
                    view,
                    queue: VecDeque::new(),
                    delta: ViewDelta::new(),
                    last_write: 0,
                    credits: ExecutionCreditAccount::new("add-flow", cfg.policy.credits(cl)),
                    engine: ReplicaEngine::new(id, StateId::new(STATE_ID), cl, cfg.engine_config(), &cfg.policy, 0),
                    stalled: false,
                    busy: false,
                    timer_gen: 0,
                    period_cl: cl,
                }
            })
            .collect();
        for (i, req) in workload.into_iter().enumerate() {
            replicas[i % n].queue.push_back(Pending { req, attempts: 0 });
        }
        let mut cluster = Cluster {
            cfg,
            router: Router::new(&topo),
            draws: eviction_draws(cfg.seed),
            global,
            replicas,
            escrow: Vec::new(),
            events: EventQueue::new(),
            log: Vec::new(),
            next_seq: 0,
            period_index: 0,
            last_sync: 0,
            sync_pending: false,
            remaining: cfg.total_requests,
            records: Vec::with_capacity(cfg.total_requests as usize),
            rounds: Vec::new(),
            counters: Counters::default(),
            violations: Vec::new(),
            requeued: HashSet::new(),
            topo,
        };
        if cfg.mode == CreditMode::ResourceCredit {
            cluster.escrow = (0..cluster.topo.edge_count())
                .map(|e| {
                    (0..n)
                        .map(|_| ResourceCreditAccount::new(format!("edge-{e}"), 0))
                        .collect()
                })
                .collect();
            cluster.rebase_escrow();
        }
        Ok(cluster)
    }

    fn run(&mut self) -> Result<(), SimError> {
        for i in 0..self.replicas.len() {
            self.schedule_arrival(i, 0);
            self.schedule_timer(i);
        }
        while let Some(ev) = self.events.pop() {
            let c = ev.controller.index();
            let t = ev.time;
            match ev.kind {
                EventKind::FlowArrival => self.on_arrival(c, t),
                EventKind::TimerExpiry { generation } => {
                    if generation == self.replicas[c].timer_gen {
                        self.on_timer(c, t);
                    }
                }
                EventKind::ClusterSync => self.sync_round(t)?,
                EventKind::ClMod { level } => {
                    let policy = &self.cfg.policy;
                    let r = &mut self.replicas[c];
                    r.engine.apply_cl_mod(level, policy, t);
                    // the running period keeps its allotment unless it has
                    // not started yet
                    if r.credits.used == 0 {
                        r.credits.allotted = policy.credits(level);
                    }
                }
                EventKind::TokenLease { .. } => {}
            }
        }
        Ok(())
    }

    fn schedule_arrival(&mut self, c: usize, t: SimTime) {
        let r = &mut self.replicas[c];
        if !r.busy && !r.stalled && !r.queue.is_empty() {
            r.busy = true;
            self.events.schedule(t, r.id, EventKind::FlowArrival);
        }
    }

    fn schedule_timer(&mut self, c: usize) {
        let r = &mut self.replicas[c];
        r.timer_gen += 1;
        let generation = r.timer_gen;
        self.events
            .schedule(r.engine.timer.deadline, r.id, EventKind::TimerExpiry { generation });
    }

    fn request_sync(&mut self, t: SimTime, initiator: ControllerId) {
        if !self.sync_pending {
            self.sync_pending = true;
            self.events.schedule(t, initiator, EventKind::ClusterSync);
        }
    }

    fn period_has_work(&self) -> bool {
        !self.log.is_empty() || self.replicas.iter().any(|r| !r.delta.is_empty())
    }

    fn check_trigger(&mut self, t: SimTime, c: usize, exhausted_now: bool) {
        let all_done = self.replicas.iter().all(|r| r.stalled || r.queue.is_empty());
        let fire = match self.cfg.trigger {
            SyncTrigger::AllExhausted => all_done,
            SyncTrigger::FirstExhausted => exhausted_now || all_done,
        };
        if fire && self.period_has_work() {
            self.request_sync(t, ControllerId(c as u16));
        }
    }

    fn on_arrival(&mut self, c: usize, t: SimTime) {
        self.replicas[c].busy = false;
        if self.replicas[c].stalled {
            return;
        }
        let Some(mut pending) = self.replicas[c].queue.pop_front() else {
            return;
        };
        let exec_mode = self.cfg.mode == CreditMode::ExecutionCredit;
        if exec_mode && self.replicas[c].credits.consume_execution().is_err() {
            let r = &mut self.replicas[c];
            r.queue.push_front(pending);
            r.stalled = true;
            self.check_trigger(t, c, true);
            return;
        }
        let req = pending.req;
        let path = self
            .router
            .constrained_dijkstra(&self.topo, &self.replicas[c].view, req.src, req.dst, req.bandwidth);
        let outcome = match path {
            None => LiveOutcome::Rejected,
            Some(path) => {
                if !exec_mode && !self.reserve_escrow(c, &path, req.bandwidth, t) {
                    pending.attempts += 1;
                    if pending.attempts < MAX_ATTEMPTS {
                        // depleted: synchronise and retry from the merged view
                        let r = &mut self.replicas[c];
                        r.queue.push_front(pending);
                        r.stalled = true;
                        let id = r.id;
                        self.request_sync(t, id);
                        return;
                    }
                    LiveOutcome::Rejected
                } else {
                    self.commit_local(c, &req, path, t)
                }
            }
        };
        self.log.push(PeriodEntry {
            time: t,
            controller: ControllerId(c as u16),
            request: req,
            outcome,
        });
        self.remaining -= 1;
        let exhausted = exec_mode && self.replicas[c].credits.is_exhausted();
        if exhausted {
            self.replicas[c].stalled = true;
        }
        self.schedule_arrival(c, t + self.cfg.service_time);
        self.check_trigger(t, c, exhausted);
    }

    fn commit_local(&mut self, c: usize, req: &FlowRequest, path: Path, t: SimTime) -> LiveOutcome {
        let seq = self.next_seq;
        self.next_seq += 1;
        let r = &mut self.replicas[c];
        let adm = place_path(&self.topo, &mut r.view, req, path, &self.draws);
        for e in &adm.path.edges {
            r.delta.reserve(*e, req.flow_id, req.bandwidth, seq);
        }
        r.view.version.increment(r.id);
        r.last_write = t;
        LiveOutcome::Admitted {
            path: adm.path.edges,
            local_cost: adm.local_cost,
        }
    }

    /// Takes `bw` from this replica's escrow on every path edge, leasing
    /// shortfalls from peers. All or nothing.
    fn reserve_escrow(&mut self, c: usize, path: &Path, bw: Bandwidth, t: SimTime) -> bool {
        let amount = bw.0;
        for (i, e) in path.edges.iter().enumerate() {
            let accounts = &mut self.escrow[e.index()];
            if accounts[c].decr(amount).is_ok() {
                continue;
            }
            let short = amount - accounts[c].headroom().min(amount);
            let before: Vec<u64> = accounts.iter().map(|a| a.headroom()).collect();
            let granted = lease_tokens(accounts, c, short);
            for (donor, h) in before.iter().enumerate() {
                let moved = h.saturating_sub(accounts[donor].headroom());
                if donor != c && moved > 0 {
                    self.counters.token_leases += 1;
                    self.counters.messages += 1;
                    self.events.schedule(
                        t + self.cfg.propagation_delay,
                        ControllerId(c as u16),
                        EventKind::TokenLease {
                            from: ControllerId(donor as u16),
                            edge: *e,
                            amount: moved,
                        },
                    );
                }
            }
            let accounts = &mut self.escrow[e.index()];
            if granted < short || accounts[c].decr(amount).is_err() {
                for done in &path.edges[..i] {
                    let _ = self.escrow[done.index()][c].incr(amount);
                }
                return false;
            }
        }
        true
    }

    /// Splits each edge's free capacity on the agreed view across replicas.
    fn rebase_escrow(&mut self) {
        let cap = self.topo.capacity().0;
        let policy = &self.cfg.policy;
        let level = self.replicas[0].engine.cl();
        for (e, accounts) in self.escrow.iter_mut().enumerate() {
            let free = cap.saturating_sub(self.global.edge(EdgeId(e as u32)).reserved().0);
            refresh_resource(accounts, free, policy, level);
        }
    }

    fn on_timer(&mut self, c: usize, t: SimTime) {
        let r = &mut self.replicas[c];
        let pending = (!r.delta.is_empty()).then(|| {
            StateFragment::new(StateId::new(STATE_ID), r.delta.clone(), r.view.version.clone(), r.id, r.last_write)
        });
        let fired = r.engine.on_timer_elapsed(pending.as_ref(), &self.cfg.policy, t).is_some();
        let id = r.id;
        if fired {
            self.counters.timer_syncs += 1;
            self.request_sync(t, id);
        }
        if self.remaining > 0 {
            self.schedule_timer(c);
        }
    }

    fn sync_round(&mut self, t: SimTime) -> Result<(), SimError> {
        self.sync_pending = false;
        if !self.period_has_work() {
            self.restart_period(t);
            return Ok(());
        }
        let n = self.replicas.len();
        // hub-based round: one state message and one ack per peer
        self.counters.messages += 2 * (n as u64 - 1);

        let fragments: Vec<StateFragment<ViewDelta>> = self
            .replicas
            .iter_mut()
            .map(|r| {
                StateFragment::new(
                    StateId::new(STATE_ID),
                    std::mem::take(&mut r.delta),
                    r.view.version.clone(),
                    r.id,
                    r.last_write,
                )
            })
            .collect();
        let mut touched: BTreeSet<EdgeId> = BTreeSet::new();
        for f in &fragments {
            touched.extend(f.payload.keys());
        }
        let resolver = self.replicas[0].engine.resolver();
        let mut acc = fragments[0].clone();
        let (mut conflicts, mut conflict_cost) = (0u64, 0.0);
        let mut invalidated: BTreeSet<FlowId> = BTreeSet::new();
        for f in &fragments[1..] {
            let m = merge_fragment(&acc, f, &resolver)?;
            if let Some(c) = &m.conflict {
                conflicts += 1;
                conflict_cost += c.cost;
                self.counters.contested += c.contested as u64;
                invalidated.extend(c.invalidated.iter().copied());
            }
            acc = m.fragment;
        }
        self.counters.conflicts += conflicts;

        if !invalidated.is_empty() {
            self.requeue_invalidated(&invalidated);
        }

        let mut records = serialized_oracle(
            &mut self.router,
            &self.topo,
            &mut self.global,
            &self.draws,
            self.period_index,
            &self.log,
        );
        let replay = self.cfg.check_invariants.then(|| {
            let mut v = self.global.clone();
            for e in &self.log {
                apply_entry(&mut v, e, self.topo.capacity(), &self.draws);
            }
            v
        });
        self.global.commit(&acc.payload, self.topo.capacity(), &self.draws);
        self.global.version = acc.version.clone();
        if let Some(replay) = replay {
            self.check_round(&replay);
        }

        // one adaptation iteration per replica
        let policy = &self.cfg.policy;
        let w_s = self.cfg.subopt_weight;
        let mut announcements = Vec::new();
        for r in &mut self.replicas {
            let own = records.iter().filter(|rec| rec.controller == r.id.0);
            let subopt = compute_suboptimality_cost(own, w_s);
            let it = r.engine.account(conflict_cost, subopt, policy, t);
            if let Some(change) = it.change {
                announcements.push((r.id, change.to));
            }
        }
        for (origin, level) in announcements {
            self.counters.cl_changes += 1;
            for peer in 0..n {
                if peer != origin.index() {
                    self.counters.messages += 1;
                    self.events.schedule(
                        t + self.cfg.propagation_delay,
                        ControllerId(peer as u16),
                        EventKind::ClMod { level },
                    );
                }
            }
        }

        for r in &mut self.replicas {
            for e in &touched {
                r.view.copy_edge_from(&self.global, *e);
            }
            r.view.version = self.global.version.clone();
        }
        if self.cfg.check_invariants {
            self.check_convergence(&fragments);
        }

        let elapsed = t - self.last_sync;
        for r in &self.replicas {
            let limit = policy.sync_period(r.period_cl);
            if t - r.engine.timer.last_sync > limit {
                self.violations.push(format!(
                    "period {} on {} lasted {} ms, limit {} ms",
                    self.period_index,
                    r.id,
                    t - r.engine.timer.last_sync,
                    limit
                ));
            }
        }
        self.rounds.push(RoundTrace {
            period_index: self.period_index,
            time: t,
            entries: self.log.len(),
            elapsed,
            conflicts,
            levels: self.replicas.iter().map(|r| r.engine.cl().index()).collect(),
        });
        self.counters.sync_rounds += 1;
        self.records.append(&mut records);
        self.log.clear();
        self.period_index += 1;
        self.restart_period(t);
        Ok(())
    }

    fn requeue_invalidated(&mut self, flows: &BTreeSet<FlowId>) {
        self.counters.invalidated += flows.len() as u64;
        let mut kept = Vec::with_capacity(self.log.len());
        let mut dropped = Vec::new();
        for entry in self.log.drain(..) {
            if flows.contains(&entry.request.flow_id) {
                dropped.push(entry);
            } else {
                kept.push(entry);
            }
        }
        self.log = kept;
        for entry in dropped.into_iter().rev() {
            let c = entry.controller.index();
            // a flow is re-queued once; a second invalidation gives it up
            if self.requeued.insert(entry.request.flow_id) {
                self.remaining += 1;
                self.replicas[c].queue.push_front(Pending {
                    req: entry.request,
                    attempts: 1,
                });
            } else {
                self.log.push(PeriodEntry {
                    outcome: LiveOutcome::Rejected,
                    ..entry
                });
            }
        }
    }

    fn check_round(&mut self, replay: &NetworkView) {
        let p = self.period_index;
        if matches!(self.cfg.strategy, ResolutionStrategy::Merge | ResolutionStrategy::UpdateInvalidation)
            && !replay.same_state(&self.global)
        {
            self.violations.push(format!("period {p}: merged view differs from the serialised replay"));
        }
        if !self.global.is_consistent() {
            self.violations.push(format!("period {p}: merged view is inconsistent"));
        }
        let cap = self.topo.capacity();
        for r in &self.replicas {
            if !r.view.is_consistent() {
                self.violations.push(format!("period {p}: view of {} is inconsistent", r.id));
            }
            if r.view.max_reserved() > cap {
                self.violations.push(format!("period {p}: view of {} exceeds capacity", r.id));
            }
        }
    }

    fn check_convergence(&mut self, fragments: &[StateFragment<ViewDelta>]) {
        let p = self.period_index;
        for r in &self.replicas {
            if !r.view.same_state(&self.global) {
                self.violations.push(format!("period {p}: view of {} did not converge", r.id));
            }
            if let Some(f) = fragments.iter().find(|f| !r.view.version.dominates(&f.version)) {
                self.violations.push(format!(
                    "period {p}: version of {} does not dominate the fragment of {}",
                    r.id, f.origin
                ));
            }
        }
    }

    /// Fresh credits, restarted timers and resumed queues.
    fn restart_period(&mut self, t: SimTime) {
        self.last_sync = t;
        let policy = &self.cfg.policy;
        for r in &mut self.replicas {
            let cl = r.engine.cl();
            r.credits.allotted = policy.credits(cl);
            r.credits.used = 0;
            r.stalled = false;
            r.period_cl = cl;
            r.engine.timer.synced(t, policy.sync_period(cl));
        }
        if self.cfg.mode == CreditMode::ResourceCredit {
            self.rebase_escrow();
        }
        for c in 0..self.replicas.len() {
            if self.remaining > 0 {
                self.schedule_timer(c);
            }
            self.schedule_arrival(c, t + self.cfg.service_time);
        }
    }

    fn finish(self) -> RunOutput {
        let cfg = self.cfg;
        let stats = RecordStats::from_records(&self.records);
        let summary = RunSummary {
            n_controllers: cfg.n_controllers,
            grid_size: cfg.grid_size,
            traffic_lo: cfg.traffic.lo,
            traffic_hi: cfg.traffic.hi,
            cl: cfg.cl.to_string(),
            total_requests: cfg.total_requests,
            seed: cfg.seed,
            stats,
            sync_rounds: self.counters.sync_rounds,
            timer_syncs: self.counters.timer_syncs,
            conflicts: self.counters.conflicts,
            contested_edges: self.counters.contested,
            messages: self.counters.messages,
            invalidated: self.counters.invalidated,
            token_leases: self.counters.token_leases,
            cl_changes: self.counters.cl_changes,
            final_cl: self.replicas.iter().map(|r| r.engine.cl().index()).collect(),
            invariant_violations: self.violations,
        };
        RunOutput {
            summary,
            records: self.records,
            rounds: self.rounds,
            final_view: self.global,
        }
    }
}
