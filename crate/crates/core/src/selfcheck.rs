//! Brute-force reference checks shared by `oracle-check` and the test suite.
//!
//! Each suite draws its cases from a seed and stops counting at the first
//! failure, which it reports with enough detail to reproduce it.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::credit::{
    lease_tokens, refresh_execution, refresh_resource, total_allotted, total_sup, CreditAmount,
    ExecutionCreditAccount, ResourceCreditAccount,
};
use crate::level::{ClPolicy, ConsistencyLevel};
use crate::net::enumerate::{enumerate_least_cost, random_loaded_view};
use crate::net::{admit, NetworkView, Router, Topology, VertexId, LINK_CAPACITY};
use crate::sim::{eviction_draws, generate_workload, run, ClMode, SimConfig, TrafficRange};
use crate::state::{Causality, ControllerId, VersionVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: u64,
    pub total: u64,
    pub counterexample: Option<String>,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.counterexample.is_none() && self.passed == self.total
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.counterexample {
            None => write!(f, "{}: {}/{} ok", self.name, self.passed, self.total),
            Some(c) => write!(f, "{}: {}/{} FAILED, first counterexample: {c}", self.name, self.passed, self.total),
        }
    }
}

fn suite(name: &'static str, total: u64, mut case: impl FnMut(u64) -> Result<(), String>) -> SuiteReport {
    let mut passed = 0;
    for i in 0..total {
        if let Err(c) = case(i) {
            return SuiteReport {
                name,
                passed,
                total,
                counterexample: Some(format!("case {i}: {c}")),
            };
        }
        passed += 1;
    }
    SuiteReport {
        name,
        passed,
        total,
        counterexample: None,
    }
}

/// Per-case generator, so a counterexample is reproducible from
/// `(seed, case)` alone.
fn case_rng(seed: u64, case: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case);
    rng
}

/// The router against exhaustive enumeration on loaded grids of at most
/// 4x4. `fault` perturbs the router's answer.
pub fn dijkstra_enumeration(cases: u64, seed: u64, fault: bool) -> SuiteReport {
    suite("dijkstra-enum", cases, |i| {
        let mut rng = case_rng(seed, i);
        let (r, c) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
        let t = Topology::grid(r, c).map_err(|e| e.to_string())?;
        let view = random_loaded_view(&t, &mut rng);
        let v = t.vertex_count() as u32;
        let src = VertexId(rng.gen_range(0..v));
        let dst = VertexId((src.0 + rng.gen_range(1..v)) % v);
        let bw = crate::net::Bandwidth::from_mbps(rng.gen_range(1..700));
        let mut got = Router::new(&t)
            .constrained_dijkstra(&t, &view, src, dst, bw)
            .map(|p| (p.cost, p.vertices));
        if fault {
            if let Some(g) = &mut got {
                g.0 += 1;
            }
        }
        let want = enumerate_least_cost(&t, &view, src, dst, bw);
        if got == want {
            Ok(())
        } else {
            Err(format!(
                "seed {seed}, {r}x{c} grid, {} -> {}, {bw}: router {got:?}, enumeration {want:?}",
                src.0, dst.0
            ))
        }
    })
}

/// Single-controller runs: every flow's cost in the serialised replay equals
/// the live cost, and both equal an independent sequential admission of the
/// same workload.
pub fn single_controller_replay(cases: u64, requests: u64, seed: u64, fault: bool) -> SuiteReport {
    suite("n1-replay", cases, |i| {
        let mut rng = case_rng(seed, i);
        let cfg = SimConfig {
            n_controllers: 1,
            grid_size: rng.gen_range(5..=10),
            traffic: TrafficRange::new(1, rng.gen_range(5..=30)),
            cl: ClMode::Fixed(ConsistencyLevel::new(rng.gen_range(1..=11)).expect("level in range")),
            total_requests: requests,
            seed: rng.gen(),
            ..SimConfig::default()
        };
        let out = run(&cfg).map_err(|e| e.to_string())?;

        let topo = Topology::grid(cfg.grid_size, cfg.grid_size).map_err(|e| e.to_string())?;
        let draws = eviction_draws(cfg.seed);
        let mut view = NetworkView::empty(&topo, ControllerId(0));
        let mut router = Router::new(&topo);
        let workload = generate_workload(&topo, cfg.traffic, cfg.total_requests, cfg.seed);
        if out.records.len() != workload.len() {
            return Err(format!("{cfg:?}: {} records for {} requests", out.records.len(), workload.len()));
        }
        for (req, rec) in workload.iter().zip(&out.records) {
            let mut serial = admit(&mut router, &topo, &mut view, req, &draws).map(|a| a.local_cost);
            if fault {
                serial = serial.map(|c| c + 1);
            }
            let same = rec.flow_id == req.flow_id.0
                && rec.local_cost == serial
                && rec.o_measured == serial
                && rec.o_optimal == serial
                && (serial.is_none() || rec.d_subopt == Some(1.0));
            if !same {
                return Err(format!(
                    "seed {} grid {} traffic {} cl {}: flow {} live {:?}/{:?}/{:?}, sequential {serial:?}",
                    cfg.seed, cfg.grid_size, cfg.traffic, cfg.cl, req.flow_id, rec.local_cost, rec.o_measured, rec.o_optimal
                ));
            }
        }
        Ok(())
    })
}

/// Small multi-controller runs with the per-round cross-checks on: the
/// merged view equals the serialised replay and every view stays within
/// capacity.
pub fn replay_equivalence(cases: u64, seed: u64) -> SuiteReport {
    suite("replay-equivalence", cases, |i| {
        let mut rng = case_rng(seed, i);
        let cfg = SimConfig {
            n_controllers: rng.gen_range(1..=3),
            grid_size: 5,
            traffic: TrafficRange::new(1, rng.gen_range(5..=30)),
            cl: ClMode::Fixed(ConsistencyLevel::new(rng.gen_range(1..=11)).expect("level in range")),
            total_requests: rng.gen_range(50..=500),
            seed: rng.gen(),
            check_invariants: true,
            ..SimConfig::default()
        };
        let out = run(&cfg).map_err(|e| e.to_string())?;
        match out.summary.invariant_violations.first() {
            None => Ok(()),
            Some(v) => Err(format!(
                "n={} cl={} traffic={} requests={} seed={}: {v}",
                cfg.n_controllers, cfg.cl, cfg.traffic, cfg.total_requests, cfg.seed
            )),
        }
    })
}

/// Random decr / incr / lease / refresh sequences over 3 to 15 accounts.
/// Totals of `sup` and `allotted` must be exactly conserved and every
/// resource account must keep `inf <= reserved <= sup`.
pub fn credit_conservation(sequences: u64, seed: u64, fault: bool) -> SuiteReport {
    let policy = ClPolicy::default();
    suite("credit-conservation", sequences, |i| {
        let mut rng = case_rng(seed, i);
        let n = rng.gen_range(3..=15);
        let level = ConsistencyLevel::new(rng.gen_range(1..=11)).expect("level in range");
        let total: CreditAmount = rng.gen_range(0..=LINK_CAPACITY.0);
        let mut res: Vec<ResourceCreditAccount> =
            (0..n).map(|_| ResourceCreditAccount::new("edge", 0)).collect();
        refresh_resource(&mut res, total, &policy, level);
        let mut exe: Vec<ExecutionCreditAccount> =
            (0..n).map(|_| ExecutionCreditAccount::new("add-flow", 0)).collect();
        refresh_execution(&mut exe, &policy, level);
        let exe_total = total_allotted(&exe);
        let steps = rng.gen_range(1..=40);
        let mut log = Vec::new();
        for step in 0..steps {
            let c = rng.gen_range(0..n);
            match rng.gen_range(0..6) {
                0 => {
                    let amt = rng.gen_range(1..=total.max(1) / 4 + 1);
                    let _ = res[c].decr(amt);
                    log.push(format!("decr({c},{amt})"));
                }
                1 if res[c].reserved > 0 => {
                    let amt = rng.gen_range(1..=res[c].reserved);
                    res[c].incr(amt);
                    log.push(format!("incr({c},{amt})"));
                }
                1 => {}
                2 => {
                    let amt = rng.gen_range(1..=total.max(1) / 2 + 1);
                    lease_tokens(&mut res, c, amt);
                    log.push(format!("lease_res({c},{amt})"));
                }
                3 => {
                    let _ = exe[c].consume_execution();
                    log.push(format!("exec({c})"));
                }
                4 => {
                    let amt = rng.gen_range(1..=exe_total);
                    lease_tokens(&mut exe, c, amt);
                    log.push(format!("lease_exec({c},{amt})"));
                }
                _ => {
                    refresh_resource(&mut res, total, &policy, level);
                    refresh_execution(&mut exe, &policy, level);
                    log.push("refresh".to_string());
                }
            }
            if fault && step == steps - 1 {
                res[0].sup += 1;
            }
            let bad = if total_sup(&res) != total {
                Some(format!("sum of sup {} != {total}", total_sup(&res)))
            } else if total_allotted(&exe) != exe_total {
                Some(format!("sum of allotted {} != {exe_total}", total_allotted(&exe)))
            } else {
                res.iter()
                    .position(|a| !a.invariant_holds())
                    .map(|k| format!("account {k} out of bounds: {:?}", res[k]))
            };
            if let Some(b) = bad {
                return Err(format!("seed {seed}, {n} accounts, {level}: {b} after {}", log.join(" ")));
            }
        }
        Ok(())
    })
}

fn random_vv(rng: &mut ChaCha8Rng) -> VersionVector {
    let k = rng.gen_range(0..=5);
    VersionVector::from_entries((0..k).map(|_| (ControllerId(rng.gen_range(0..6)), rng.gen_range(0..4))))
}

/// Join laws of merge and its agreement with the causal order.
pub fn version_vector_laws(triples: u64, seed: u64) -> SuiteReport {
    suite("version-vectors", triples, |i| {
        let mut rng = case_rng(seed, i);
        let (a, b, c) = (random_vv(&mut rng), random_vv(&mut rng), random_vv(&mut rng));
        let ab = a.merge(&b);
        let fail = |law: &str| Err(format!("seed {seed}: {law} fails for a={a:?} b={b:?} c={c:?}"));
        if ab != b.merge(&a) {
            return fail("commutativity");
        }
        if ab.merge(&c) != a.merge(&b.merge(&c)) {
            return fail("associativity");
        }
        if a.merge(&a) != a {
            return fail("idempotence");
        }
        if !matches!(a.compare(&ab), Causality::Before | Causality::Equal) {
            return fail("merge dominates its inputs");
        }
        let below = matches!(a.compare(&b), Causality::Before | Causality::Equal);
        if below != (ab == b) {
            return fail("a <= b iff merge(a, b) = b");
        }
        if (a.compare(&b) == Causality::Equal) != (a == b) {
            return fail("equal iff same entries");
        }
        Ok(())
    })
}
