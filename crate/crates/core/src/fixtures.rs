//! Small hand-checkable instances built in memory, for tests and examples.

use crate::calibration::{TravelLeg, TravelTimeModel};
use crate::demand::{
    CallSquare, DemandModel, DemandSlotScheme, GenerationZone, LocationRule, SlotBoundaryPolicy, SquareIdx,
};
use crate::model::{
    five_period_scheme, BaseAllocation, CoverageClassification, CoverageDenominator, EdFacility, FleetScenario,
    GeoPoint, NetworkModel, OutcomeProbabilities, PointKind, Schedule, SeverityTag, SimulationInstance, SlotCalendar,
    UrgencyClass,
};
use crate::stochastic::{DistributionRef, Phase, ServiceTimeCatalog};

/// Layout of a tiny instance. Every travel pair the engine can query gets
/// `default_travel` minutes until overridden with [`set_travel`].
#[derive(Debug, Clone)]
pub struct TinyLayout {
    /// `(base id, H24 units, H12 units)`.
    pub bases: Vec<(String, u32, u32)>,
    pub squares: Vec<String>,
    /// `(ED id, referral groups served)`.
    pub eds: Vec<(String, Vec<String>)>,
    pub default_travel: f64,
    pub threshold: f64,
}

impl Default for TinyLayout {
    fn default() -> Self {
        TinyLayout {
            bases: vec![("B1".into(), 1, 0)],
            squares: vec!["S1".into()],
            eds: vec![("E1".into(), vec!["general".into()])],
            default_travel: 5.0,
            threshold: 30.0,
        }
    }
}

fn constant(v: f64) -> DistributionRef {
    DistributionRef::constant(v).expect("valid constant")
}

/// One zone with no arrivals, red triage, identity severity transition,
/// treatment on site, no sanitization, no offload delay and one-minute
/// service times. Monday 00:00 at time 0, horizon of four weeks.
pub fn tiny_instance(layout: &TinyLayout) -> SimulationInstance {
    let mut groups: Vec<String> = Vec::new();
    for (_, gs) in &layout.eds {
        for g in gs {
            if !groups.contains(g) {
                groups.push(g.clone());
            }
        }
    }
    let mut points = Vec::new();
    let mut push = |id: &str, kind| {
        points.push(GeoPoint {
            id: id.to_string(),
            kind,
            x: 0.0,
            y: 0.0,
            label: id.to_string(),
        })
    };
    for (b, _, _) in &layout.bases {
        push(b, PointKind::Base);
    }
    for s in &layout.squares {
        push(s, PointKind::DemandSquare);
    }
    for (e, _) in &layout.eds {
        push(e, PointKind::EmergencyDept);
    }

    let slots = five_period_scheme();
    let slot_ids: Vec<String> = slots.iter().map(|s| s.id.clone()).collect();
    let pk: Vec<(String, PointKind)> = points.iter().map(|p| (p.id.clone(), p.kind)).collect();
    let mut travel = TravelTimeModel::new(&pk, &slot_ids);
    let idx = |kind: PointKind| -> Vec<usize> {
        pk.iter()
            .enumerate()
            .filter(|(_, p)| p.1 == kind)
            .map(|(i, _)| i)
            .collect()
    };
    let (bases, squares, eds) = (
        idx(PointKind::Base),
        idx(PointKind::DemandSquare),
        idx(PointKind::EmergencyDept),
    );
    let t = layout.default_travel;
    let mut set =
        |o: usize, d: usize, leg| travel.set_nominal(crate::model::PointIdx(o), crate::model::PointIdx(d), leg, t);
    for &s in &squares {
        for &b in &bases {
            set(b, s, TravelLeg::BaseToScene);
            set(s, b, TravelLeg::ReturnToBase);
        }
        for &e in &eds {
            set(s, e, TravelLeg::SceneToEd);
            set(e, s, TravelLeg::EdToScene);
        }
        for &s2 in &squares {
            set(s, s2, TravelLeg::SceneToScene);
        }
    }
    for &e in &eds {
        for &b in &bases {
            set(e, b, TravelLeg::ReturnToBase);
        }
    }
    let calendar = SlotCalendar::new(&slots, 0);
    let network = NetworkModel::new(points, travel, slots, calendar);

    let scheme = DemandSlotScheme::new(vec![("day".into(), 0)], 0).expect("one slot");
    let demand = DemandModel {
        scheme,
        zones: vec![GenerationZone {
            id: "z1".into(),
            interarrival: vec![DistributionRef::never()],
            square_weights: (0..layout.squares.len()).map(|i| (SquareIdx(i), 1.0)).collect(),
            tag_probabilities: [1.0, 0.0, 0.0, 0.0],
            referral: {
                let mut r = vec![0.0; groups.len()];
                r[0] = 1.0;
                r
            },
        }],
        squares: squares
            .iter()
            .zip(&layout.squares)
            .map(|(&p, id)| CallSquare {
                id: id.clone(),
                zone: 0,
                points: vec![crate::model::PointIdx(p)],
                area_km2: 1.0,
            })
            .collect(),
        groups,
        boundary_policy: SlotBoundaryPolicy::Keep,
        location_rule: LocationRule::Representative,
    };

    let eds_f = eds
        .iter()
        .zip(&layout.eds)
        .map(|(&p, (_, gs))| EdFacility {
            point: crate::model::PointIdx(p),
            groups: gs.clone(),
            aod_probability: 0.0,
            aod_delay: constant(0.0),
        })
        .collect();

    let scenario = FleetScenario {
        name: "base".into(),
        allocations: layout
            .bases
            .iter()
            .map(|(b, h24, h12)| BaseAllocation {
                base: b.clone(),
                count_h24: *h24,
                count_h12: *h12,
            })
            .collect(),
        dispatch_threshold_minutes: layout.threshold,
        threshold_urgent: None,
        threshold_non_urgent: None,
        h12_on_minute: Schedule::DEFAULT_H12_ON,
        h12_off_minute: Schedule::DEFAULT_H12_OFF,
    };
    let mut identity = [[0.0; 4]; 4];
    for (i, row) in identity.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let treat = OutcomeProbabilities {
        cancel_en_route: 0.0,
        treat_on_site: 1.0,
        transport: 0.0,
    };
    SimulationInstance {
        network,
        demand,
        service_times: ServiceTimeCatalog::uniform(constant(1.0)),
        eds: eds_f,
        severity_transition: identity,
        outcomes: [treat; 4],
        sanitization_probability: 0.0,
        scenarios: vec![scenario.clone()],
        scenario,
        horizon_minutes: 28.0 * 1440.0,
        warmup_minutes: 0.0,
        replications: 2,
        base_seed: 7,
        week_start_offset_minutes: 0,
        classify_by: CoverageClassification::Triage,
        coverage_denominator: CoverageDenominator::Class,
    }
}

/// Sets a phase to a constant for both urgency classes.
pub fn set_phase(inst: &mut SimulationInstance, phase: Phase, minutes: f64) {
    set_phase_dist(inst, phase, constant(minutes));
}

pub fn set_phase_dist(inst: &mut SimulationInstance, phase: Phase, dist: DistributionRef) {
    for u in UrgencyClass::ALL {
        inst.service_times.set(phase, u, dist.clone());
    }
}

/// Overrides one nominal travel time. Panics on unknown point ids.
pub fn set_travel(inst: &mut SimulationInstance, origin: &str, destination: &str, leg: TravelLeg, minutes: f64) {
    let o = inst.network.point(origin).expect("known origin");
    let d = inst.network.point(destination).expect("known destination");
    inst.network.travel.set_nominal(o, d, leg, minutes);
}

/// Sets every outcome row to the same probabilities.
pub fn set_outcomes(inst: &mut SimulationInstance, cancel: f64, treat: f64, transport: f64) {
    inst.outcomes = [OutcomeProbabilities {
        cancel_en_route: cancel,
        treat_on_site: treat,
        transport,
    }; 4];
}

/// Triage tag for every generated call.
pub fn set_triage_tag(inst: &mut SimulationInstance, tag: SeverityTag) {
    for z in &mut inst.demand.zones {
        z.tag_probabilities = [0.0; 4];
        z.tag_probabilities[tag.index()] = 1.0;
    }
}

/// Replaces the active (and only) scenario's threshold and allocations.
pub fn set_scenario(inst: &mut SimulationInstance, scenario: FleetScenario) {
    inst.scenarios = vec![scenario.clone()];
    inst.scenario = scenario;
}
