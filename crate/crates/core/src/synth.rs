//! Synthetic instance shaped like a mountainous province served by twelve
//! bases: five generation zones with the historical zone x slot call counts,
//! about 270 call squares from a grid over a synthetic call cloud, thirteen
//! EDs (one local, the rest in a distant metropolitan area), and the
//! published correction factors.

use crate::calibration::{CalibrationEntry, CalibrationTable, GroupKey, TravelLeg, TravelTimeModel};
use crate::demand::{
    build_demand_grid, BoundingBox, CallSquare, DemandModel, DemandSlotScheme, GenerationZone, HistoricalCall,
    LocationRule, SlotBoundaryPolicy, SquareIdx,
};
use crate::model::{
    five_period_scheme, BaseAllocation, CoverageClassification, CoverageDenominator, EdFacility, FleetScenario,
    GeoPoint, NetworkModel, OutcomeProbabilities, PointIdx, PointKind, Schedule, SimulationInstance, SlotCalendar,
    UrgencyClass,
};
use crate::stochastic::{DistributionRef, Phase, RngStream, ServiceTimeCatalog};

/// Zones in instance order.
pub const ZONES: [&str; 5] = ["Antrodoco", "Mirtense", "Rieti", "S. Elpidio", "Salario"];

/// Demand slots as `(id, start minute of day)`.
pub const DEMAND_SLOTS: [(&str, u32); 4] = [("00-07", 0), ("07-12", 7 * 60), ("12-18", 12 * 60), ("18-24", 18 * 60)];

/// Annual calls per zone and demand slot.
pub const ANNUAL_CALLS: [[u32; 4]; 5] = [
    [104, 270, 349, 246],
    [389, 805, 989, 805],
    [839, 1925, 2247, 1742],
    [99, 184, 217, 153],
    [353, 640, 814, 704],
];

/// Historical annual urgent and non-urgent call counts.
pub const URGENT_CALLS: u32 = 10399;
pub const NON_URGENT_CALLS: u32 = 1715;

/// Correction factors `[non-urgent base-scene, non-urgent scene-ED, urgent
/// base-scene, urgent scene-ED]` per five-period slot, in
/// [`five_period_scheme`] order.
pub const CORRECTION_FACTORS: [[f64; 4]; 5] = [
    [0.904, 0.964, 0.867, 0.919],
    [0.894, 0.943, 0.914, 0.868],
    [0.887, 1.064, 0.920, 0.959],
    [0.902, 0.902, 0.949, 0.878],
    [0.894, 1.038, 0.888, 0.993],
];

/// Bases and fire stations with planar positions in km.
pub const BASES: [(&str, f64, f64); 15] = [
    ("Amatrice", 56.0, 54.0),
    ("Borgo S. Pietro", 44.0, 12.0),
    ("Leonessa", 36.0, 52.0),
    ("Magliano", 6.0, 33.0),
    ("Osteria Nuova", 26.0, 14.0),
    ("Paganico", 34.0, 10.0),
    ("Passo Corese", 16.0, 4.0),
    ("Poggio Mirteto", 10.0, 16.0),
    ("Posta", 50.0, 44.0),
    ("Rieti", 30.0, 32.0),
    ("Stimigliano Scalo", 4.0, 22.0),
    ("Torri in Sabina", 12.0, 27.0),
    ("Poggio Mirteto FS", 11.5, 15.0),
    ("Posta FS", 51.0, 45.5),
    ("Rieti FS", 31.5, 30.5),
];

/// Fire stations: candidate sites with no ambulance in the current deployment.
pub const FIRE_STATIONS: [&str; 3] = ["Poggio Mirteto FS", "Posta FS", "Rieti FS"];

/// EDs with planar positions in km; only the first lies in the territory.
pub const EDS: [(&str, f64, f64); 13] = [
    ("ED01 Rieti", 30.5, 31.5),
    ("ED02 Gemelli", -12.0, -40.0),
    ("ED03 San Pietro", -10.0, -34.0),
    ("ED04 Civita Castellana", -18.0, 22.0),
    ("ED05 Gonfalone", 4.0, -18.0),
    ("ED06 Viterbo", -42.0, 36.0),
    ("ED07 Sant'Andrea", -4.0, -29.0),
    ("ED08 San Camillo", -8.0, -47.0),
    ("ED09 Bambino Gesu", -7.0, -43.0),
    ("ED10 San Filippo Neri", -11.0, -36.0),
    ("ED11 Tivoli", 22.0, -26.0),
    ("ED12 Umberto I", 0.0, -41.0),
    ("ED13 Campus Bio-Medico", 2.0, -56.0),
];

/// Referral groups with their EDs (indices into [`EDS`]) and the
/// probability a call belongs to the group.
const GROUPS: [(&str, &[usize], f64); 6] = [
    ("general", &[0, 3, 10], 0.80),
    ("cardio", &[0, 1, 7, 12], 0.06),
    ("stroke", &[1, 6, 7, 11], 0.04),
    ("trauma", &[6, 7, 11], 0.03),
    ("pediatric", &[8], 0.02),
    ("metro_general", &[2, 4, 5, 9, 12], 0.05),
];

/// Zone centres in km; squares join the zone whose centre is nearest.
const ZONE_CENTRES: [(f64, f64); 5] = [(48.0, 42.0), (10.0, 22.0), (29.0, 31.0), (40.0, 14.0), (22.0, 9.0)];

/// Towns seeding the call cloud: `(x, y, spread km, relative weight)`.
const TOWNS: [(f64, f64, f64, f64); 14] = [
    (30.0, 32.0, 3.0, 40.0),
    (56.0, 54.0, 3.0, 2.0),
    (36.0, 52.0, 3.0, 3.0),
    (50.0, 44.0, 3.0, 3.0),
    (46.0, 36.0, 4.0, 3.0),
    (6.0, 33.0, 3.0, 3.0),
    (10.0, 16.0, 3.0, 7.0),
    (4.0, 22.0, 3.0, 5.0),
    (12.0, 27.0, 3.0, 5.0),
    (16.0, 4.0, 3.0, 6.0),
    (26.0, 14.0, 3.0, 7.0),
    (34.0, 10.0, 3.0, 3.0),
    (44.0, 12.0, 3.0, 4.0),
    (24.0, 24.0, 4.0, 4.0),
];

/// Territory extent in km.
const WIDTH_KM: f64 = 60.0;
const HEIGHT_KM: f64 = 58.0;
const CLOUD_SIZE: usize = 5000;
const SQUARE_AREA_KM2: f64 = 10.0;

fn gaussian(s: &mut RngStream) -> f64 {
    let u1 = 1.0 - s.uniform();
    let u2 = s.uniform();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Historical-looking call cloud in metres: town clusters plus a thin
/// uniform background over the territory.
pub fn call_cloud(seed: u64) -> Vec<HistoricalCall> {
    let mut s = RngStream::new(seed, 0, "synth/cloud");
    let weights: Vec<f64> = TOWNS.iter().map(|t| t.3).collect();
    let mut calls = Vec::with_capacity(CLOUD_SIZE);
    while calls.len() < CLOUD_SIZE {
        let (x, y) = if s.uniform() < 0.02 {
            (s.uniform() * WIDTH_KM, s.uniform() * HEIGHT_KM)
        } else {
            let t = TOWNS[s.categorical(&weights).expect("positive weights")];
            (t.0 + t.2 * gaussian(&mut s), t.1 + t.2 * gaussian(&mut s))
        };
        if !(0.0..WIDTH_KM).contains(&x) || !(0.0..HEIGHT_KM).contains(&y) {
            continue;
        }
        let zone = nearest_zone(x, y);
        calls.push(HistoricalCall {
            x: x * 1000.0,
            y: y * 1000.0,
            zone: Some(ZONES[zone].to_string()),
        });
    }
    calls
}

fn nearest_zone(x: f64, y: f64) -> usize {
    let d = |c: (f64, f64)| (c.0 - x).powi(2) + (c.1 - y).powi(2);
    (0..ZONE_CENTRES.len())
        .min_by(|&a, &b| d(ZONE_CENTRES[a]).total_cmp(&d(ZONE_CENTRES[b])))
        .expect("zones")
}

/// Deterministic road-winding factor in [1.2, 1.6) for an unordered pair.
fn winding(seed: u64, a: &str, b: &str) -> f64 {
    use sha2::{Digest, Sha256};
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(lo.as_bytes());
    h.update([0]);
    h.update(hi.as_bytes());
    let d = h.finalize();
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    1.2 + 0.4 * (v as f64 / u64::MAX as f64)
}

/// Routing-service style time in minutes: road length over a speed that
/// grows with distance (mountain roads short, highways long).
fn route_minutes(seed: u64, a: &GeoPoint, b: &GeoPoint) -> f64 {
    let km = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() / 1000.0;
    let road = km * winding(seed, &a.id, &b.id);
    let speed = 40.0 + 45.0 * (1.0 - (-road / 35.0).exp());
    let t = 1.5 + road / speed * 60.0;
    (t * 100.0).round() / 100.0
}

fn tri(lo: f64, mode: f64, hi: f64) -> DistributionRef {
    DistributionRef::triangular(lo, mode, hi, true).expect("ordered triangular")
}

fn service_times() -> ServiceTimeCatalog {
    use Phase::*;
    let table: [(Phase, DistributionRef, DistributionRef); 7] = [
        (TelephoneTriage, tri(1.0, 2.0, 6.0), tri(1.0, 3.0, 8.0)),
        (AmbulanceAssignment, tri(0.5, 1.0, 5.0), tri(1.0, 2.0, 10.0)),
        (AmbulancePreparation, tri(1.0, 2.0, 4.0), tri(1.0, 3.0, 6.0)),
        (TreatmentOnSite, tri(5.0, 15.0, 45.0), tri(5.0, 20.0, 50.0)),
        (PatientLoad, tri(5.0, 10.0, 25.0), tri(5.0, 12.0, 25.0)),
        (PatientDischarge, tri(5.0, 10.0, 30.0), tri(5.0, 10.0, 30.0)),
        (Sanitization, tri(15.0, 25.0, 50.0), tri(15.0, 25.0, 50.0)),
    ];
    ServiceTimeCatalog::build(|phase, u| {
        table.iter().find(|r| r.0 == phase).map(|r| match u {
            UrgencyClass::Urgent => r.1.clone(),
            UrgencyClass::NonUrgent => r.2.clone(),
        })
    })
    .expect("every phase listed")
}

fn allocation(overrides: &[(&str, u32, u32)]) -> Vec<BaseAllocation> {
    BASES
        .iter()
        .map(|(b, _, _)| {
            let (h24, h12) =
                overrides
                    .iter()
                    .find(|o| o.0 == *b)
                    .map(|o| (o.1, o.2))
                    .unwrap_or(if FIRE_STATIONS.contains(b) {
                        (0, 0)
                    } else if *b == "Rieti" {
                        (2, 0)
                    } else {
                        (1, 0)
                    });
            BaseAllocation {
                base: b.to_string(),
                count_h24: h24,
                count_h12: h12,
            }
        })
        .collect()
}

/// Current deployment, the eight published alternatives, and one H24 unit
/// more or less at the busiest base.
pub fn scenarios() -> Vec<FleetScenario> {
    type Overrides = &'static [(&'static str, u32, u32)];
    let defs: [(&str, Overrides); 11] = [
        ("as-is", &[]),
        ("S1", &[("Rieti", 2, 1)]),
        ("S2", &[("Rieti", 1, 1)]),
        ("S3", &[("Poggio Mirteto FS", 1, 0)]),
        ("S4", &[("Posta FS", 1, 0)]),
        ("S5", &[("Rieti FS", 1, 0)]),
        ("S6", &[("Poggio Mirteto FS", 1, 0), ("Poggio Mirteto", 0, 0)]),
        ("S7", &[("Posta FS", 1, 0), ("Posta", 0, 0)]),
        ("S8", &[("Rieti FS", 1, 0), ("Rieti", 1, 0)]),
        ("rieti-plus-one", &[("Rieti", 3, 0)]),
        ("rieti-minus-one", &[("Rieti", 1, 0)]),
    ];
    defs.iter()
        .map(|(name, ov)| FleetScenario {
            name: name.to_string(),
            allocations: allocation(ov),
            dispatch_threshold_minutes: 30.0,
            threshold_urgent: None,
            threshold_non_urgent: None,
            h12_on_minute: Schedule::DEFAULT_H12_ON,
            h12_off_minute: Schedule::DEFAULT_H12_OFF,
        })
        .collect()
}

/// Mean interarrival (minutes) that yields `annual` calls per year in a
/// slot of `slot_minutes` per day.
pub fn interarrival_mean(annual: u32, slot_minutes: u32) -> f64 {
    365.0 * slot_minutes as f64 / annual as f64
}

/// Builds the synthetic instance. Identical seeds give identical instances.
pub fn rieti_like(seed: u64) -> SimulationInstance {
    let cloud = call_cloud(seed);
    let bbox = BoundingBox {
        min_x: 0.0,
        min_y: 0.0,
        max_x: WIDTH_KM * 1000.0,
        max_y: HEIGHT_KM * 1000.0,
    };
    let grid = build_demand_grid(&cloud, SQUARE_AREA_KM2, Some(bbox)).expect("non-empty cloud");

    let mut points = Vec::new();
    for (id, x, y) in BASES {
        points.push(GeoPoint {
            id: id.to_string(),
            kind: PointKind::Base,
            x: x * 1000.0,
            y: y * 1000.0,
            label: id.to_string(),
        });
    }
    let first_square = points.len();
    for c in &grid.cells {
        points.push(GeoPoint {
            id: c.square_id.clone(),
            kind: PointKind::DemandSquare,
            x: c.rep_x.round(),
            y: c.rep_y.round(),
            label: c.zone.clone().unwrap_or_default(),
        });
    }
    let first_ed = points.len();
    for (id, x, y) in EDS {
        points.push(GeoPoint {
            id: id.to_string(),
            kind: PointKind::EmergencyDept,
            x: x * 1000.0,
            y: y * 1000.0,
            label: id.to_string(),
        });
    }

    let slots = five_period_scheme();
    let slot_ids: Vec<String> = slots.iter().map(|s| s.id.clone()).collect();
    let kinds: Vec<(String, PointKind)> = points.iter().map(|p| (p.id.clone(), p.kind)).collect();
    let mut travel = TravelTimeModel::new(&kinds, &slot_ids);
    let bases: Vec<usize> = (0..first_square).collect();
    let squares: Vec<usize> = (first_square..first_ed).collect();
    let eds: Vec<usize> = (first_ed..points.len()).collect();
    let mut set = |o: usize, d: usize, leg| {
        let t = route_minutes(seed, &points[o], &points[d]);
        travel.set_nominal(PointIdx(o), PointIdx(d), leg, t);
    };
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
    let mut table = CalibrationTable::new();
    for (si, slot) in slot_ids.iter().enumerate() {
        let f = CORRECTION_FACTORS[si];
        for (u, scene, ed) in [
            (UrgencyClass::NonUrgent, f[0], f[1]),
            (UrgencyClass::Urgent, f[2], f[3]),
        ] {
            for (leg, alpha) in [
                (TravelLeg::BaseToScene, scene),
                (TravelLeg::SceneToScene, scene),
                (TravelLeg::EdToScene, scene),
                (TravelLeg::SceneToEd, ed),
            ] {
                table.insert(
                    GroupKey {
                        leg,
                        slot: slot.clone(),
                        urgency: u,
                    },
                    CalibrationEntry { alpha, n_obs: 0 },
                );
            }
        }
    }
    travel.set_calibration(table);
    for leg in [TravelLeg::BaseToScene, TravelLeg::SceneToScene, TravelLeg::EdToScene] {
        travel.set_delta(leg, 1.5);
    }
    let calendar = SlotCalendar::new(&slots, 0);
    let network = NetworkModel::new(points, travel, slots, calendar);

    let scheme = DemandSlotScheme::new(
        DEMAND_SLOTS
            .iter()
            .map(|(id, start)| (id.to_string(), *start))
            .collect(),
        0,
    )
    .expect("valid demand slots");
    let squares_m: Vec<CallSquare> = grid
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| CallSquare {
            id: c.square_id.clone(),
            zone: ZONES
                .iter()
                .position(|z| Some(*z) == c.zone.as_deref())
                .expect("cloud calls carry zones"),
            points: vec![PointIdx(first_square + i)],
            area_km2: SQUARE_AREA_KM2,
        })
        .collect();
    let urgent_share = URGENT_CALLS as f64 / (URGENT_CALLS + NON_URGENT_CALLS) as f64;
    let red = 0.25;
    let green = 0.10;
    let tags = [red, urgent_share - red, green, 1.0 - urgent_share - green];
    let zones: Vec<GenerationZone> = ZONES
        .iter()
        .enumerate()
        .map(|(z, id)| GenerationZone {
            id: id.to_string(),
            interarrival: (0..DEMAND_SLOTS.len())
                .map(|k| {
                    DistributionRef::exponential(interarrival_mean(ANNUAL_CALLS[z][k], scheme.slot_length(k)))
                        .expect("positive mean")
                })
                .collect(),
            square_weights: grid
                .cells
                .iter()
                .enumerate()
                .filter(|(i, _)| squares_m[*i].zone == z)
                .map(|(i, c)| (SquareIdx(i), c.weight as f64))
                .collect(),
            tag_probabilities: tags,
            referral: GROUPS.iter().map(|g| g.2).collect(),
        })
        .collect();
    let demand = DemandModel {
        scheme,
        zones,
        squares: squares_m,
        groups: GROUPS.iter().map(|g| g.0.to_string()).collect(),
        boundary_policy: SlotBoundaryPolicy::Resample,
        location_rule: LocationRule::Representative,
    };

    let eds_f: Vec<EdFacility> = eds
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let (prob, mean) = match k {
                0 => (0.20, 25.0),
                3 | 5 | 10 => (0.15, 20.0),
                _ => (0.35, 40.0),
            };
            EdFacility {
                point: PointIdx(p),
                groups: GROUPS
                    .iter()
                    .filter(|g| g.1.contains(&k))
                    .map(|g| g.0.to_string())
                    .collect(),
                aod_probability: prob,
                aod_delay: DistributionRef::exponential(mean).expect("positive mean"),
            }
        })
        .collect();

    let outcome = |c, t, p| OutcomeProbabilities {
        cancel_en_route: c,
        treat_on_site: t,
        transport: p,
    };
    let scenarios = scenarios();
    SimulationInstance {
        network,
        demand,
        service_times: service_times(),
        eds: eds_f,
        severity_transition: [
            [0.85, 0.10, 0.05, 0.00],
            [0.10, 0.75, 0.15, 0.00],
            [0.02, 0.10, 0.80, 0.08],
            [0.00, 0.02, 0.18, 0.80],
        ],
        outcomes: [
            outcome(0.03, 0.07, 0.90),
            outcome(0.05, 0.25, 0.70),
            outcome(0.08, 0.42, 0.50),
            outcome(0.10, 0.60, 0.30),
        ],
        sanitization_probability: 0.05,
        scenario: scenarios[0].clone(),
        scenarios,
        horizon_minutes: 547_200.0,
        warmup_minutes: 21_600.0,
        replications: 30,
        base_seed: seed,
        week_start_offset_minutes: 0,
        classify_by: CoverageClassification::Triage,
        coverage_denominator: CoverageDenominator::Class,
    }
}
