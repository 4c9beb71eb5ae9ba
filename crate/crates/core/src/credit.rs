//! Escrow accounting of synchronisation credits.
//!
//! A replica may modify shared state without coordination as long as it stays
//! within its locally assigned credits. Resource credits bound the amount of a
//! divisible resource (bandwidth on one edge) a replica may reserve; execution
//! credits bound how many times an operation may run between two
//! cluster-wide synchronisations.
//!
//! The depletion test is `reserved + n > sup`: a request fails when the
//! remaining headroom is smaller than the request. With `inf = 0` the literal
//! condition `sup - reserved <= inf` is the special case of zero headroom.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::level::{ClPolicy, ConsistencyLevel};

pub type CreditAmount = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CreditError {
    #[error("shares sum to {got}, expected {expected}")]
    SharesMismatch { expected: CreditAmount, got: CreditAmount },
    #[error("{shares} shares given for {controllers} controllers")]
    ShareCount { shares: usize, controllers: usize },
    #[error("cannot split {total} credits over {controllers} controllers with at least one each")]
    TooFewCredits { total: CreditAmount, controllers: usize },
    #[error("controller count must be at least one")]
    NoControllers,
}

/// The request exceeds the remaining resource credits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("resource credits depleted: requested {requested}, headroom {headroom}")]
pub struct Depleted {
    pub requested: CreditAmount,
    pub headroom: CreditAmount,
}

/// All execution credits have been used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("execution credits exhausted ({allotted} allotted)")]
pub struct Exhausted {
    pub allotted: CreditAmount,
}

/// Split of a credit total over the controllers of a cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditAllocation {
    pub id: String,
    pub total: CreditAmount,
    pub per_controller: Vec<CreditAmount>,
}

/// Distributes `total` over `n` controllers. Without explicit shares the
/// split is equal and the remainder goes to the lowest indices.
pub fn allocate(
    id: impl Into<String>,
    total: CreditAmount,
    n: usize,
    shares: Option<&[CreditAmount]>,
) -> Result<CreditAllocation, CreditError> {
    if n == 0 {
        return Err(CreditError::NoControllers);
    }
    let per_controller = match shares {
        Some(s) => {
            if s.len() != n {
                return Err(CreditError::ShareCount { shares: s.len(), controllers: n });
            }
            let got: CreditAmount = s.iter().sum();
            if got != total {
                return Err(CreditError::SharesMismatch { expected: total, got });
            }
            s.to_vec()
        }
        None => {
            if total < n as CreditAmount {
                return Err(CreditError::TooFewCredits { total, controllers: n });
            }
            equal_split(total, n)
        }
    };
    Ok(CreditAllocation {
        id: id.into(),
        total,
        per_controller,
    })
}

/// Equal split with the remainder on the lowest indices. Shares may be zero.
pub fn equal_split(total: CreditAmount, n: usize) -> Vec<CreditAmount> {
    let base = total / n as CreditAmount;
    let rem = (total % n as CreditAmount) as usize;
    (0..n).map(|i| base + CreditAmount::from(i < rem)).collect()
}

/// Credits that can be lent to another controller.
pub trait Escrow {
    fn headroom(&self) -> CreditAmount;
    /// Moves `n` units of the upper bound away from this account.
    fn give(&mut self, n: CreditAmount);
    /// Receives `n` units of upper bound.
    fn take(&mut self, n: CreditAmount);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceCreditAccount {
    pub state_id: String,
    pub inf: CreditAmount,
    pub sup: CreditAmount,
    pub reserved: CreditAmount,
}

/// Whether an `incr` had to clamp at `inf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Released {
    Exact,
    Clamped,
}

impl ResourceCreditAccount {
    pub fn new(state_id: impl Into<String>, sup: CreditAmount) -> Self {
        Self {
            state_id: state_id.into(),
            inf: 0,
            sup,
            reserved: 0,
        }
    }

    /// Consumes `n` tokens.
    pub fn decr(&mut self, n: CreditAmount) -> Result<(), Depleted> {
        debug_assert!(n > 0, "decr of zero tokens");
        if self.reserved + n > self.sup {
            return Err(Depleted {
                requested: n,
                headroom: self.headroom(),
            });
        }
        self.reserved += n;
        self.check();
        Ok(())
    }

    /// Produces `n` tokens, clamping at `inf`.
    pub fn incr(&mut self, n: CreditAmount) -> Released {
        debug_assert!(n > 0, "incr of zero tokens");
        let out = match self.reserved.checked_sub(n) {
            Some(r) if r >= self.inf => {
                self.reserved = r;
                Released::Exact
            }
            _ => {
                warn!(
                    "{}: releasing {} with only {} reserved, clamping at {}",
                    self.state_id, n, self.reserved, self.inf
                );
                self.reserved = self.inf;
                Released::Clamped
            }
        };
        self.check();
        out
    }

    fn check(&self) {
        debug_assert!(self.inf <= self.reserved && self.reserved <= self.sup, "{self:?}");
    }

    pub fn invariant_holds(&self) -> bool {
        self.inf <= self.reserved && self.reserved <= self.sup
    }
}

impl Escrow for ResourceCreditAccount {
    fn headroom(&self) -> CreditAmount {
        self.sup - self.reserved
    }
    fn give(&mut self, n: CreditAmount) {
        assert!(n <= self.headroom());
        self.sup -= n;
    }
    fn take(&mut self, n: CreditAmount) {
        self.sup += n;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionCreditAccount {
    pub op_id: String,
    pub allotted: CreditAmount,
    pub used: CreditAmount,
}

impl ExecutionCreditAccount {
    pub fn new(op_id: impl Into<String>, allotted: CreditAmount) -> Self {
        Self {
            op_id: op_id.into(),
            allotted,
            used: 0,
        }
    }

    pub fn consume_execution(&mut self) -> Result<(), Exhausted> {
        if self.used < self.allotted {
            self.used += 1;
            Ok(())
        } else {
            Err(Exhausted { allotted: self.allotted })
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.used >= self.allotted
    }
}

impl Escrow for ExecutionCreditAccount {
    fn headroom(&self) -> CreditAmount {
        self.allotted.saturating_sub(self.used)
    }
    fn give(&mut self, n: CreditAmount) {
        assert!(n <= self.headroom());
        self.allotted -= n;
    }
    fn take(&mut self, n: CreditAmount) {
        self.allotted += n;
    }
}

/// Borrows up to `amount` credits for `accounts[requester]` from the other
/// accounts.
///
/// Donors are visited round-robin by index. Each visit moves at most half of
/// the headroom the donor had when the lease started (rounded up), so a lease
/// never drains a donor in one round. Returns the granted amount; zero means
/// the reservation must fail.
pub fn lease_tokens<A: Escrow>(accounts: &mut [A], requester: usize, amount: CreditAmount) -> CreditAmount {
    let quantum: Vec<CreditAmount> = accounts.iter().map(|a| a.headroom().div_ceil(2)).collect();
    let mut granted = 0;
    loop {
        let mut moved_this_round = 0;
        for donor in 0..accounts.len() {
            if donor == requester || granted == amount {
                continue;
            }
            let n = quantum[donor].min(accounts[donor].headroom()).min(amount - granted);
            if n > 0 {
                accounts[donor].give(n);
                granted += n;
                moved_this_round += n;
            }
        }
        if granted == amount || moved_this_round == 0 {
            break;
        }
    }
    if granted > 0 {
        accounts[requester].take(granted);
    }
    granted
}

/// Resets execution accounts after a cluster-wide synchronisation.
pub fn refresh_execution(accounts: &mut [ExecutionCreditAccount], policy: &ClPolicy, level: ConsistencyLevel) {
    let allotted = policy.credits(level);
    for a in accounts {
        a.used = 0;
        a.allotted = allotted;
    }
}

/// Re-bases the per-controller resource accounts of one resource against the
/// merged view: the free capacity (optionally capped per controller by the
/// level's resource-credit size) is split equally and nothing counts as
/// reserved in the new period.
pub fn refresh_resource(
    accounts: &mut [ResourceCreditAccount],
    free_capacity: CreditAmount,
    policy: &ClPolicy,
    level: ConsistencyLevel,
) {
    let n = accounts.len();
    if n == 0 {
        return;
    }
    let total = match policy.resource_credits(level) {
        Some(cap) => free_capacity.min(cap.saturating_mul(n as CreditAmount)),
        None => free_capacity,
    };
    for (a, share) in accounts.iter_mut().zip(equal_split(total, n)) {
        a.sup = share;
        a.reserved = 0;
    }
}

pub fn total_sup(accounts: &[ResourceCreditAccount]) -> CreditAmount {
    accounts.iter().map(|a| a.sup).sum()
}

pub fn total_allotted(accounts: &[ExecutionCreditAccount]) -> CreditAmount {
    accounts.iter().map(|a| a.allotted).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn res(sup: u64, reserved: u64) -> ResourceCreditAccount {
        ResourceCreditAccount {
            state_id: "bw".into(),
            inf: 0,
            sup,
            reserved,
        }
    }

    #[test]
    fn allocation_examples() {
        let a = allocate("bw S1->S2", 1_000, 3, Some(&[200, 400, 400])).unwrap();
        assert_eq!(a.per_controller, vec![200, 400, 400]);
        assert_eq!(allocate("add-flow", 60, 3, None).unwrap().per_controller, vec![20, 20, 20]);
        assert_eq!(allocate("x", 10, 3, None).unwrap().per_controller, vec![4, 3, 3]);
        assert_eq!(
            allocate("x", 10, 3, Some(&[1, 2, 3])),
            Err(CreditError::SharesMismatch { expected: 10, got: 6 })
        );
        assert!(matches!(allocate("x", 2, 3, None), Err(CreditError::TooFewCredits { .. })));
        assert!(matches!(allocate("x", 2, 3, Some(&[2])), Err(CreditError::ShareCount { .. })));
    }

    #[test]
    fn decr_examples() {
        let mut a = res(200, 150);
        a.decr(30).unwrap();
        assert_eq!(a.reserved, 180);

        let mut full = res(200, 200);
        assert_eq!(full.decr(1), Err(Depleted { requested: 1, headroom: 0 }));
        assert_eq!(full.reserved, 200);

        let mut c1 = res(200, 0);
        c1.decr(200).unwrap();
        assert!(c1.decr(1).is_err());
    }

    #[test]
    fn incr_examples() {
        let mut a = res(200, 180);
        assert_eq!(a.incr(30), Released::Exact);
        assert_eq!(a.reserved, 150);
        let mut b = res(200, 10);
        assert_eq!(b.incr(50), Released::Clamped);
        assert_eq!(b.reserved, 0);
        let mut c = res(200, 0);
        assert_eq!(c.incr(5), Released::Clamped);
        assert_eq!(c.reserved, 0);
    }

    #[test]
    fn execution_examples() {
        let mut a = ExecutionCreditAccount { op_id: "add-flow".into(), allotted: 65, used: 64 };
        a.consume_execution().unwrap();
        assert_eq!(a.used, 65);
        assert!(a.consume_execution().is_err());

        let mut b = ExecutionCreditAccount::new("add-flow", 2);
        b.consume_execution().unwrap();
        assert_eq!(b.used, 1);

        let mut z = ExecutionCreditAccount::new("add-flow", 0);
        assert_eq!(z.consume_execution(), Err(Exhausted { allotted: 0 }));
    }

    #[test]
    fn exactly_one_exhaustion_after_allotment() {
        let mut a = ExecutionCreditAccount::new("op", 9);
        let fails = (0..10).filter(|_| a.consume_execution().is_err()).count();
        assert_eq!(fails, 1);
    }

    #[test]
    fn lease_single_donor() {
        // requester at 0 needs 10; donor A has 30 headroom, B none
        let mut accts = vec![res(100, 100), res(30, 0), res(50, 50)];
        assert_eq!(lease_tokens(&mut accts, 0, 10), 10);
        assert_eq!(accts[1].sup, 20);
        assert_eq!(accts[0].sup, 110);
        assert_eq!(accts[2].sup, 50);
    }

    #[test]
    fn lease_without_headroom_fails() {
        let mut accts = vec![res(10, 10), res(30, 30), res(5, 5)];
        assert_eq!(lease_tokens(&mut accts, 0, 1), 0);
        assert_eq!(total_sup(&accts), 45);
        assert_eq!(accts[0].sup, 10);
    }

    #[test]
    fn lease_in_half_headroom_rounds() {
        let mut accts = vec![res(0, 0), res(30, 0), res(30, 0)];
        let before = total_sup(&accts);
        assert_eq!(lease_tokens(&mut accts, 0, 40), 40);
        // 15 from each in the first round, then 10 more from the first donor
        assert_eq!(accts[1].sup, 5);
        assert_eq!(accts[2].sup, 15);
        assert_eq!(total_sup(&accts), before);
    }

    #[test]
    fn lease_partial_grant() {
        let mut accts = vec![res(0, 0), res(3, 0)];
        assert_eq!(lease_tokens(&mut accts, 0, 10), 3);
        assert_eq!(accts[1].sup, 0);
        assert_eq!(accts[0].sup, 3);
    }

    #[test]
    fn execution_lease_moves_allotment() {
        let mut accts = vec![
            ExecutionCreditAccount { op_id: "op".into(), allotted: 4, used: 4 },
            ExecutionCreditAccount { op_id: "op".into(), allotted: 4, used: 0 },
        ];
        assert_eq!(lease_tokens(&mut accts, 0, 1), 1);
        assert_eq!(total_allotted(&accts), 8);
        accts[0].consume_execution().unwrap();
    }

    #[test]
    fn refresh_sets_level_credits() {
        let policy = ClPolicy::default();
        let mut accts = vec![ExecutionCreditAccount::new("add-flow", 41); 3];
        accts[1].used = 17;
        refresh_execution(&mut accts, &policy, ConsistencyLevel::new(8).unwrap());
        assert!(accts.iter().all(|a| a.allotted == 41 && a.used == 0));
        refresh_execution(&mut accts, &policy, ConsistencyLevel::new(7).unwrap());
        assert!(accts.iter().all(|a| a.allotted == 33));

        let mut single = vec![ExecutionCreditAccount { op_id: "op".into(), allotted: 41, used: 41 }];
        refresh_execution(&mut single, &policy, ConsistencyLevel::new(8).unwrap());
        assert_eq!(single[0], ExecutionCreditAccount { op_id: "op".into(), allotted: 41, used: 0 });
    }

    #[test]
    fn refresh_resource_splits_free_capacity() {
        let policy = ClPolicy::default();
        let mut accts = vec![res(10, 3), res(10, 10), res(5, 1)];
        refresh_resource(&mut accts, 1_000, &policy, ConsistencyLevel::new(3).unwrap());
        assert_eq!(accts.iter().map(|a| a.sup).collect::<Vec<_>>(), vec![334, 333, 333]);
        assert!(accts.iter().all(|a| a.reserved == 0));

        let capped = policy.with_resource_credits(Some(ConsistencyLevel::all().map(|c| (c, 100)).collect()));
        refresh_resource(&mut accts, 1_000, &capped, ConsistencyLevel::new(3).unwrap());
        assert_eq!(total_sup(&accts), 300);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Decr(usize, u64),
        Incr(usize, u64),
        Lease(usize, u64),
    }

    fn arb_op(n: usize) -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..n, 1u64..60).prop_map(|(i, x)| Op::Decr(i, x)),
            (0..n, 1u64..60).prop_map(|(i, x)| Op::Incr(i, x)),
            (0..n, 1u64..80).prop_map(|(i, x)| Op::Lease(i, x)),
        ]
    }

    proptest! {
        #[test]
        fn decr_incr_roundtrip(sup in 1u64..500, reserved in 0u64..500, n in 1u64..500) {
            let mut a = res(sup, reserved.min(sup));
            let before = a.clone();
            if a.decr(n).is_ok() {
                prop_assert_eq!(a.incr(n), Released::Exact);
            }
            prop_assert_eq!(a, before);
        }

        #[test]
        fn escrow_conserves_totals(ops in proptest::collection::vec(arb_op(5), 1..60)) {
            let mut accts: Vec<_> = allocate("bw", 1000, 5, None).unwrap()
                .per_controller.into_iter().map(|s| res(s, 0)).collect();
            for op in ops {
                match op {
                    Op::Decr(i, x) => { let _ = accts[i].decr(x); }
                    Op::Incr(i, x) => { accts[i].incr(x); }
                    Op::Lease(i, x) => { lease_tokens(&mut accts, i, x); }
                }
                prop_assert_eq!(total_sup(&accts), 1000);
                prop_assert!(accts.iter().all(|a| a.invariant_holds()));
            }
        }
    }
}
