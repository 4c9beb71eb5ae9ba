use dcpsim_core::engine::ResolutionStrategy;
use dcpsim_core::level::{ConsistencyLevel, ThresholdMap};
use dcpsim_core::sim::{run, ClMode, CreditMode, SimConfig, SyncTrigger, ThresholdSetting, TrafficRange};

fn cl(i: u8) -> ConsistencyLevel {
    ConsistencyLevel::new(i).unwrap()
}

fn small(n: u16, level: u8, requests: u64) -> SimConfig {
    SimConfig {
        n_controllers: n,
        grid_size: 6,
        traffic: TrafficRange::new(1, 30),
        cl: ClMode::Fixed(cl(level)),
        total_requests: requests,
        seed: 3,
        ..SimConfig::default()
    }
}

#[test]
fn single_controller_has_no_suboptimality() {
    let out = run(&small(1, 11, 3000)).unwrap();
    let s = &out.summary.stats;
    assert_eq!(s.flows, 3000);
    assert_eq!(s.suboptimal, 0);
    assert_eq!(s.divergent, 0);
    assert!(out.records.iter().all(|r| r.rejected || r.d_subopt == Some(1.0)));
    assert_eq!(out.summary.messages, 0);
    assert_eq!(out.summary.conflicts, 0);
}

#[test]
fn runs_are_deterministic() {
    let cfg = small(4, 9, 1500);
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.records, b.records);
    assert!(a.final_view.same_state(&b.final_view));
    let c = run(&SimConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn round_count_follows_the_credit_budget() {
    for (n, level, r) in [(3, 11, 2000), (2, 1, 301), (5, 6, 1234), (15, 4, 999)] {
        let out = run(&small(n, level, r)).unwrap();
        let per_round = n as u64 * SimConfig::default().policy.credits(cl(level));
        assert_eq!(out.summary.sync_rounds, r.div_ceil(per_round), "n={n} cl={level}");
        assert_eq!(out.summary.timer_syncs, 0);
        assert_eq!(out.summary.messages, out.summary.sync_rounds * 2 * (n as u64 - 1));
    }
}

#[test]
fn strictest_level_syncs_after_every_second_flow() {
    let out = run(&small(3, 1, 60)).unwrap();
    assert_eq!(out.summary.sync_rounds, 10);
    assert!(out.rounds.iter().all(|r| r.entries == 6));
    for period in 0..10 {
        for c in 0..3u16 {
            let own = out
                .records
                .iter()
                .filter(|r| r.period_index == period && r.controller == c)
                .count();
            assert_eq!(own, 2);
        }
    }
}

#[test]
fn merged_view_matches_serialised_replay() {
    let cfg = SimConfig {
        check_invariants: true,
        ..small(3, 11, 2500)
    };
    let out = run(&cfg).unwrap();
    assert!(out.summary.invariant_violations.is_empty(), "{:?}", out.summary.invariant_violations);
    assert!(out.final_view.is_consistent());
}

#[test]
fn adaptation_pins_at_the_bounds() {
    let tighten = SimConfig {
        cl: ClMode::Adaptive { initial: cl(11) },
        thresholds: ThresholdSetting::Explicit(ThresholdMap::uniform(-2.0, -1.0).unwrap()),
        ..small(3, 11, 1500)
    };
    let out = run(&tighten).unwrap();
    assert_eq!(out.summary.final_cl, vec![1, 1, 1]);
    // one step per replica per round until the bottom
    assert_eq!(out.rounds[9].levels, vec![1, 1, 1]);

    let relax = SimConfig {
        cl: ClMode::Adaptive { initial: cl(1) },
        thresholds: ThresholdSetting::Explicit(ThresholdMap::uniform(1e12, 1e13).unwrap()),
        ..small(3, 1, 1500)
    };
    let out = run(&relax).unwrap();
    assert_eq!(out.summary.final_cl, vec![11, 11, 11]);
    assert!(out.summary.cl_changes >= 30);
}

#[test]
fn fixed_level_never_moves() {
    let out = run(&small(3, 5, 800)).unwrap();
    assert_eq!(out.summary.cl_changes, 0);
    assert!(out.rounds.iter().all(|r| r.levels == vec![5, 5, 5]));
}

#[test]
fn resource_mode_runs_and_stays_within_capacity() {
    let cfg = SimConfig {
        mode: CreditMode::ResourceCredit,
        check_invariants: true,
        ..small(3, 6, 1500)
    };
    let out = run(&cfg).unwrap();
    assert_eq!(out.summary.stats.flows, 1500);
    assert!(out.summary.sync_rounds > 0);
    assert!(out.summary.invariant_violations.is_empty(), "{:?}", out.summary.invariant_violations);
}

#[test]
fn update_invalidation_terminates() {
    let cfg = SimConfig {
        strategy: ResolutionStrategy::UpdateInvalidation,
        ..small(4, 11, 1200)
    };
    let out = run(&cfg).unwrap();
    assert_eq!(out.summary.stats.flows, 1200);
    assert!(out.summary.invalidated > 0);
}

#[test]
fn first_exhausted_trigger_shortens_periods() {
    let base = small(3, 8, 1200);
    let all = run(&base).unwrap();
    let first = run(&SimConfig {
        trigger: SyncTrigger::FirstExhausted,
        ..base
    })
    .unwrap();
    assert!(first.summary.sync_rounds >= all.summary.sync_rounds);
    assert_eq!(first.summary.stats.flows, 1200);
}

#[test]
fn last_writer_wins_still_scores_every_flow() {
    let out = run(&SimConfig {
        strategy: ResolutionStrategy::LastWriterWins,
        ..small(3, 11, 900)
    })
    .unwrap();
    assert_eq!(out.summary.stats.flows, 900);
    assert!(out.summary.conflicts > 0);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn consistent_records_are_never_better_than_optimal(
            seed in any::<u64>(),
            n in 2u16..=3,
            level in 1u8..=11,
            grid in 5u32..=7,
            requests in 50u64..600,
        ) {
            let cfg = SimConfig { seed, grid_size: grid, check_invariants: true, ..small(n, level, requests) };
            let out = run(&cfg).unwrap();
            prop_assert!(out.summary.invariant_violations.is_empty(), "{:?}", out.summary.invariant_violations);
            prop_assert_eq!(out.records.len() as u64, requests);
            for r in out.records.iter().filter(|r| !r.divergent) {
                if let Some(d) = r.d_subopt {
                    prop_assert!(d <= 1.0, "{:?}", r);
                }
            }
            let again = run(&cfg).unwrap();
            prop_assert_eq!(&out.records, &again.records);
        }
    }
}
