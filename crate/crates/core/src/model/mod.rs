//! Domain data model and the validated, immutable [`SimulationInstance`].

mod config;
mod slots;
mod types;

use std::collections::HashMap;

pub use config::{load_instance, save_instance, DistSpec, InstanceError};
pub use slots::{
    five_period_scheme, validate_week_partition, SlotCalendar, SlotDiagnostic, TimeSlot, WeekPattern, MINUTES_PER_DAY,
    MINUTES_PER_WEEK,
};
pub use types::{
    Ambulance, BaseAllocation, FleetScenario, GeoPoint, PointIdx, PointKind, Schedule, SeverityTag, UrgencyClass,
    VehicleClass,
};

use crate::calibration::TravelTimeModel;
use crate::demand::DemandModel;
use crate::stochastic::{DistributionRef, ServiceTimeCatalog};

/// Points plus the travel-time model and its calibration calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub points: Vec<GeoPoint>,
    pub travel: TravelTimeModel,
    pub time_slots: Vec<TimeSlot>,
    pub calendar: SlotCalendar,
    index: HashMap<String, PointIdx>,
}

impl NetworkModel {
    pub fn new(
        points: Vec<GeoPoint>,
        travel: TravelTimeModel,
        time_slots: Vec<TimeSlot>,
        calendar: SlotCalendar,
    ) -> Self {
        let index = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), PointIdx(i)))
            .collect();
        NetworkModel {
            points,
            travel,
            time_slots,
            calendar,
            index,
        }
    }

    pub fn point(&self, id: &str) -> Option<PointIdx> {
        self.index.get(id).copied()
    }

    pub fn point_id(&self, idx: PointIdx) -> &str {
        &self.points[idx.0].id
    }

    pub fn kind(&self, idx: PointIdx) -> PointKind {
        self.points[idx.0].kind
    }

    pub fn count(&self, kind: PointKind) -> usize {
        self.points.iter().filter(|p| p.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdFacility {
    pub point: PointIdx,
    /// Referral groups (hub/spoke tiers, pathologies) served by this ED.
    pub groups: Vec<String>,
    pub aod_probability: f64,
    pub aod_delay: DistributionRef,
}

/// Mission ending probabilities for one on-scene tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeProbabilities {
    pub cancel_en_route: f64,
    pub treat_on_site: f64,
    pub transport: f64,
}

impl OutcomeProbabilities {
    pub fn sum(&self) -> f64 {
        self.cancel_en_route + self.treat_on_site + self.transport
    }

    /// Probability of transport given the mission was not cancelled.
    pub fn transport_given_reached(&self) -> f64 {
        let reached = self.treat_on_site + self.transport;
        if reached > 0.0 {
            self.transport / reached
        } else {
            0.0
        }
    }
}

/// Which tag decides a call's urgency class in coverage KPIs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoverageClassification {
    #[default]
    Triage,
    OnScene,
}

impl CoverageClassification {
    pub fn as_str(self) -> &'static str {
        match self {
            CoverageClassification::Triage => "triage",
            CoverageClassification::OnScene => "onscene",
        }
    }
}

/// Which calls make up the denominator of a class's coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoverageDenominator {
    /// Measured calls of the same class.
    #[default]
    Class,
    /// All measured calls, so the two classes' coverages add up.
    AllCalls,
}

impl CoverageDenominator {
    pub fn as_str(self) -> &'static str {
        match self {
            CoverageDenominator::Class => "class",
            CoverageDenominator::AllCalls => "all_calls",
        }
    }
}

/// Everything a replication needs. Immutable after load and shareable
/// across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationInstance {
    pub network: NetworkModel,
    pub demand: DemandModel,
    pub service_times: ServiceTimeCatalog,
    pub eds: Vec<EdFacility>,
    /// `[triage][on_scene]`, indexed by [`SeverityTag::index`].
    pub severity_transition: [[f64; 4]; 4],
    /// Indexed by [`SeverityTag::index`].
    pub outcomes: [OutcomeProbabilities; 4],
    pub sanitization_probability: f64,
    pub scenarios: Vec<FleetScenario>,
    /// The active scenario.
    pub scenario: FleetScenario,
    pub horizon_minutes: f64,
    pub warmup_minutes: f64,
    pub replications: u32,
    pub base_seed: u64,
    /// Minute of week (Monday 00:00 = 0) at simulation time 0.
    pub week_start_offset_minutes: u32,
    pub classify_by: CoverageClassification,
    pub coverage_denominator: CoverageDenominator,
}

impl SimulationInstance {
    /// A copy with `name` as the active scenario.
    pub fn with_scenario(&self, name: &str) -> Result<Self, InstanceError> {
        let scenario = self
            .scenarios
            .iter()
            .find(|s| s.name == name)
            .cloned()
            .ok_or_else(|| InstanceError::CrossRefError(format!("scenario `{name}`")))?;
        Ok(SimulationInstance {
            scenario,
            ..self.clone()
        })
    }

    /// The active scenario's ambulances, sorted by id.
    pub fn fleet(&self) -> Vec<Ambulance> {
        build_fleet(&self.scenario, &self.network)
    }

    pub fn scenario_names(&self) -> Vec<&str> {
        self.scenarios.iter().map(|s| s.name.as_str()).collect()
    }
}

/// Ambulance ids are `<base>-H24-<k>` / `<base>-H12-<k>`, numbered from 1.
pub fn build_fleet(scenario: &FleetScenario, network: &NetworkModel) -> Vec<Ambulance> {
    let mut fleet = Vec::new();
    for a in &scenario.allocations {
        let Some(home) = network.point(&a.base) else {
            continue;
        };
        for k in 1..=a.count_h24 {
            fleet.push(Ambulance {
                id: format!("{}-H24-{k}", a.base),
                home_base: home,
                schedule: Schedule::H24,
                vehicle_class: VehicleClass::Bls,
            });
        }
        for k in 1..=a.count_h12 {
            fleet.push(Ambulance {
                id: format!("{}-H12-{k}", a.base),
                home_base: home,
                schedule: Schedule::H12 {
                    on_minute: scenario.h12_on_minute,
                    off_minute: scenario.h12_off_minute,
                },
                vehicle_class: VehicleClass::Bls,
            });
        }
    }
    fleet.sort_by(|a, b| a.id.cmp(&b.id));
    fleet
}
