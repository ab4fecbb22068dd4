//! Engine invariants over randomly perturbed instances.

use emsim_core::calibration::TravelLeg;
use emsim_core::demand::CallStatus;
use emsim_core::engine::{run_replication, RunOptions};
use emsim_core::fixtures::{set_outcomes, set_phase_dist, set_travel, tiny_instance, TinyLayout};
use emsim_core::model::{BaseAllocation, EdFacility, FleetScenario};
use emsim_core::stochastic::{DistributionRef, Phase};
use emsim_core::{synth, PointIdx, SimulationInstance};
use proptest::prelude::*;

fn checked() -> RunOptions {
    RunOptions {
        check_invariants: true,
        ..RunOptions::default()
    }
}

/// Three bases (one with an H12 unit), two squares, two EDs, random travel
/// times and outcomes, exponential service times.
fn random_instance(travel: &[f64], cancel: f64, transport: f64, san: f64, mean_gap: f64) -> SimulationInstance {
    let layout = TinyLayout {
        bases: vec![("B1".into(), 1, 1), ("B2".into(), 1, 0), ("B3".into(), 0, 1)],
        squares: vec!["S1".into(), "S2".into()],
        eds: vec![
            ("E1".into(), vec!["general".into()]),
            ("E2".into(), vec!["general".into()]),
        ],
        default_travel: 5.0,
        threshold: 25.0,
    };
    let mut inst = tiny_instance(&layout);
    let mut k = 0;
    let mut next = || {
        k += 1;
        travel[(k - 1) % travel.len()]
    };
    for b in ["B1", "B2", "B3"] {
        for s in ["S1", "S2"] {
            set_travel(&mut inst, b, s, TravelLeg::BaseToScene, next());
            set_travel(&mut inst, s, b, TravelLeg::ReturnToBase, next());
        }
        for e in ["E1", "E2"] {
            set_travel(&mut inst, e, b, TravelLeg::ReturnToBase, next());
        }
    }
    for s in ["S1", "S2"] {
        for e in ["E1", "E2"] {
            set_travel(&mut inst, s, e, TravelLeg::SceneToEd, next());
            set_travel(&mut inst, e, s, TravelLeg::EdToScene, next());
        }
        for s2 in ["S1", "S2"] {
            set_travel(&mut inst, s, s2, TravelLeg::SceneToScene, next());
        }
    }
    for p in Phase::ALL {
        set_phase_dist(&mut inst, p, DistributionRef::exponential(6.0).unwrap());
    }
    set_outcomes(&mut inst, cancel, 1.0 - cancel - transport, transport);
    inst.sanitization_probability = san;
    inst.demand.zones[0].interarrival = vec![DistributionRef::exponential(mean_gap).unwrap()];
    inst.demand.zones[0].tag_probabilities = [0.3, 0.4, 0.2, 0.1];
    inst.eds = vec![
        EdFacility {
            point: inst.network.point("E1").unwrap(),
            groups: vec!["general".into()],
            aod_probability: 0.3,
            aod_delay: DistributionRef::exponential(20.0).unwrap(),
        },
        EdFacility {
            point: inst.network.point("E2").unwrap(),
            groups: vec!["general".into()],
            aod_probability: 0.0,
            aod_delay: DistributionRef::constant(0.0).unwrap(),
        },
    ];
    inst.horizon_minutes = 7.0 * 1440.0;
    inst.warmup_minutes = 1440.0;
    inst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn invariants_hold_on_random_instances(
        travel in prop::collection::vec(1.0f64..40.0, 8..30),
        cancel in 0.0f64..0.3,
        transport in 0.0f64..0.7,
        san in 0.0f64..0.5,
        mean_gap in 8.0f64..120.0,
        seed in 0u64..10_000,
    ) {
        let mut inst = random_instance(&travel, cancel, transport, san, mean_gap);
        inst.base_seed = seed;
        let out = run_replication(&inst, 0, &checked());
        let report = out.invariants.unwrap();
        prop_assert!(report.is_clean(), "{:?}", report.violations);
        for r in &out.records {
            prop_assert!(r.call.times.is_monotone(r.call.arrival_minute));
            if r.call.status.is_terminal() && r.call.status != CallStatus::CancelledEnRoute {
                prop_assert!(r.response_time_minutes.unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn replay_is_deterministic(seed in 0u64..10_000, rep in 0u32..5) {
        let mut inst = random_instance(&[5.0, 9.0, 14.0, 3.0], 0.05, 0.6, 0.1, 20.0);
        inst.base_seed = seed;
        let a = run_replication(&inst, rep, &RunOptions::default());
        let b = run_replication(&inst, rep, &RunOptions::default());
        prop_assert_eq!(a.events.digest(), b.events.digest());
        prop_assert_eq!(a.records, b.records);
    }

    #[test]
    fn adding_capacity_keeps_the_call_stream(seed in 0u64..10_000) {
        let mut inst = random_instance(&[5.0, 9.0, 14.0, 3.0], 0.05, 0.6, 0.1, 20.0);
        inst.base_seed = seed;
        let mut bigger = inst.clone();
        bigger.scenario = FleetScenario {
            allocations: inst
                .scenario
                .allocations
                .iter()
                .map(|a| BaseAllocation { count_h24: a.count_h24 + 1, ..a.clone() })
                .collect(),
            ..inst.scenario.clone()
        };
        let a = run_replication(&inst, 0, &RunOptions::default());
        let b = run_replication(&bigger, 0, &RunOptions::default());
        let calls = |o: &emsim_core::engine::ReplicationOutput| -> Vec<(f64, PointIdx, u8)> {
            o.records.iter().map(|r| (r.call.arrival_minute, r.call.scene, r.call.triage_tag.rank())).collect()
        };
        prop_assert_eq!(calls(&a), calls(&b));
    }
}

#[test]
fn synthetic_year_is_clean() {
    let inst = synth::rieti_like(2);
    let out = run_replication(&inst, 0, &checked());
    let report = out.invariants.unwrap();
    assert!(report.events_checked > 100_000);
    assert!(
        report.is_clean(),
        "{:?}",
        &report.violations[..report.violations.len().min(5)]
    );
}
