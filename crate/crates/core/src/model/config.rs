//! Root TOML configuration plus the CSV data files it references.
//!
//! Paths inside the configuration are relative to the configuration file's
//! directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    validate_week_partition, CoverageClassification, CoverageDenominator, EdFacility, FleetScenario, GeoPoint,
    NetworkModel, OutcomeProbabilities, PointIdx, PointKind, SeverityTag, SimulationInstance, SlotCalendar, TimeSlot,
    UrgencyClass, WeekPattern,
};
use crate::calibration::{CalibrationEntry, CalibrationTable, GroupKey, TravelLeg, TravelTimeModel};
use crate::demand::{
    CallSquare, DemandModel, DemandSlotScheme, GenerationZone, LocationRule, SlotBoundaryPolicy, SquareIdx,
};
use crate::model::{five_period_scheme, BaseAllocation};
use crate::stochastic::{DistKind, DistributionRef, Phase, ServiceTimeCatalog};

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstanceError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("schema violation in {field}: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("unresolved reference: {0}")]
    CrossRefError(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

fn schema(field: impl Into<String>, reason: impl ToString) -> InstanceError {
    InstanceError::SchemaViolation {
        field: field.into(),
        reason: reason.to_string(),
    }
}

/// A distribution as written in the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSpec {
    /// Inline `values` or a one-column CSV `file` with header `value`.
    Empirical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<String>,
        #[serde(default)]
        truncate_at_zero: bool,
    },
    Exponential {
        mean: f64,
        #[serde(default)]
        truncate_at_zero: bool,
    },
    Triangular {
        low: f64,
        mode: f64,
        high: f64,
        #[serde(default)]
        truncate_at_zero: bool,
    },
    /// `value = inf` means "never".
    Constant {
        value: f64,
        #[serde(default)]
        truncate_at_zero: bool,
    },
}

impl DistSpec {
    pub fn from_dist(d: &DistributionRef) -> Self {
        let truncate_at_zero = d.truncate_at_zero();
        match d.kind() {
            DistKind::Empirical(v) => DistSpec::Empirical {
                values: Some(v.clone()),
                file: None,
                truncate_at_zero,
            },
            DistKind::Exponential { mean } => DistSpec::Exponential {
                mean: *mean,
                truncate_at_zero,
            },
            DistKind::Triangular { low, mode, high } => DistSpec::Triangular {
                low: *low,
                mode: *mode,
                high: *high,
                truncate_at_zero,
            },
            DistKind::Constant(value) => DistSpec::Constant {
                value: *value,
                truncate_at_zero,
            },
        }
    }

    fn resolve(&self, base_dir: &Path, field: &str) -> Result<DistributionRef, InstanceError> {
        let (kind, trunc) = match self {
            DistSpec::Empirical {
                values,
                file,
                truncate_at_zero,
            } => {
                let v = match (values, file) {
                    (Some(v), None) => v.clone(),
                    (None, Some(f)) => read_values(&base_dir.join(f))?,
                    _ => return Err(schema(field, "empirical needs exactly one of `values` or `file`")),
                };
                (DistKind::Empirical(v), *truncate_at_zero)
            }
            DistSpec::Exponential { mean, truncate_at_zero } => {
                (DistKind::Exponential { mean: *mean }, *truncate_at_zero)
            }
            DistSpec::Triangular {
                low,
                mode,
                high,
                truncate_at_zero,
            } => (
                DistKind::Triangular {
                    low: *low,
                    mode: *mode,
                    high: *high,
                },
                *truncate_at_zero,
            ),
            DistSpec::Constant {
                value,
                truncate_at_zero,
            } => (DistKind::Constant(*value), *truncate_at_zero),
        };
        DistributionRef::new(kind, trunc).map_err(|e| schema(field, e))
    }
}

fn default_horizon() -> f64 {
    547_200.0
}
fn default_warmup() -> f64 {
    21_600.0
}
fn default_replications() -> u32 {
    30
}
fn default_seed() -> u64 {
    1
}
fn default_policy() -> String {
    "keep".into()
}
fn default_location() -> String {
    "representative".into()
}
fn default_classify() -> String {
    "triage".into()
}
fn default_h12_on() -> u32 {
    super::Schedule::DEFAULT_H12_ON
}
fn default_h12_off() -> u32 {
    super::Schedule::DEFAULT_H12_OFF
}
fn default_pattern() -> WeekPattern {
    WeekPattern::Custom
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    simulation: RawSimulation,
    network: RawNetwork,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    time_slots: Vec<RawTimeSlot>,
    demand: RawDemand,
    service_times: RawServiceTimes,
    eds: Vec<RawEd>,
    severity_transition: RawTransition,
    outcomes: RawOutcomes,
    sanitization: RawSanitization,
    #[serde(default)]
    kpi: RawKpi,
    scenarios: Vec<RawScenario>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    #[serde(default = "default_horizon")]
    horizon_minutes: f64,
    #[serde(default = "default_warmup")]
    warmup_minutes: f64,
    #[serde(default = "default_replications")]
    replications: u32,
    #[serde(default = "default_seed")]
    base_seed: u64,
    #[serde(default)]
    week_start_offset_minutes: u32,
    #[serde(default = "default_policy")]
    slot_boundary_policy: String,
    #[serde(default = "default_location")]
    location_rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default_scenario: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    points: String,
    travel_times: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration: Option<String>,
    #[serde(default)]
    noise_delta: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTimeSlot {
    id: String,
    #[serde(default = "default_pattern")]
    pattern: WeekPattern,
    ranges: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDemandSlot {
    id: String,
    start: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDemand {
    slots: Vec<RawDemandSlot>,
    squares: String,
    groups: Vec<String>,
    zones: Vec<RawZone>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTagVector {
    red: f64,
    yellow: f64,
    green: f64,
    white: f64,
}

impl RawTagVector {
    fn to_array(self) -> [f64; 4] {
        [self.red, self.yellow, self.green, self.white]
    }

    fn from_array(a: [f64; 4]) -> Self {
        RawTagVector {
            red: a[0],
            yellow: a[1],
            green: a[2],
            white: a[3],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawZone {
    id: String,
    tag_probabilities: RawTagVector,
    referral: BTreeMap<String, f64>,
    interarrival: BTreeMap<String, DistSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawServiceTimes {
    urgent: BTreeMap<String, DistSpec>,
    non_urgent: BTreeMap<String, DistSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEd {
    id: String,
    groups: Vec<String>,
    aod_probability: f64,
    aod_delay: DistSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransition {
    red: [f64; 4],
    yellow: [f64; 4],
    green: [f64; 4],
    white: [f64; 4],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutcome {
    cancel_en_route: f64,
    treat_on_site: f64,
    transport: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutcomes {
    red: RawOutcome,
    yellow: RawOutcome,
    green: RawOutcome,
    white: RawOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSanitization {
    probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKpi {
    #[serde(default = "default_classify")]
    classify_by: String,
    #[serde(default = "default_denominator")]
    coverage_denominator: String,
}

impl Default for RawKpi {
    fn default() -> Self {
        RawKpi {
            classify_by: default_classify(),
            coverage_denominator: default_denominator(),
        }
    }
}

fn default_denominator() -> String {
    CoverageDenominator::Class.as_str().to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAllocation {
    base: String,
    #[serde(default)]
    h24: u32,
    #[serde(default)]
    h12: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    dispatch_threshold_minutes: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold_urgent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold_non_urgent: Option<f64>,
    #[serde(default = "default_h12_on")]
    h12_on_minute: u32,
    #[serde(default = "default_h12_off")]
    h12_off_minute: u32,
    allocations: Vec<RawAllocation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PointRow {
    id: String,
    kind: String,
    x: f64,
    y: f64,
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TravelRow {
    origin: String,
    destination: String,
    leg: String,
    t_rs: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationRow {
    leg: String,
    slot: String,
    urgency: String,
    alpha: f64,
    n_obs: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquareRow {
    square_id: String,
    zone: String,
    point_id: String,
    weight: f64,
    area_km2: f64,
    #[serde(default)]
    alt_points: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ValueRow {
    value: f64,
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, InstanceError> {
    if !path.exists() {
        return Err(InstanceError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| InstanceError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| schema(format!("{name} row {}", i + 2), e)))
        .collect()
}

fn read_values(path: &Path) -> Result<Vec<f64>, InstanceError> {
    Ok(read_csv::<ValueRow>(path)?.into_iter().map(|r| r.value).collect())
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), InstanceError> {
    let io = |e: &dyn ToString| InstanceError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))
}

fn check_probability(field: &str, p: f64) -> Result<(), InstanceError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(schema(field, format!("probability {p} outside [0, 1]")))
    }
}

fn check_stochastic(what: &str, row: &[f64]) -> Result<(), InstanceError> {
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(InstanceError::InvariantViolation(format!(
            "{what}: entries must lie in [0, 1]"
        )));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(InstanceError::InvariantViolation(format!(
            "{what} sums to {s}, expected 1"
        )));
    }
    Ok(())
}

fn unique<'a>(what: &str, ids: impl IntoIterator<Item = &'a str>) -> Result<(), InstanceError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(InstanceError::InvariantViolation(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

/// Loads and fully validates an instance.
pub fn load_instance(config_path: &Path) -> Result<SimulationInstance, InstanceError> {
    if !config_path.exists() {
        return Err(InstanceError::MissingFile(config_path.to_path_buf()));
    }
    let text = fs::read_to_string(config_path).map_err(|e| InstanceError::Io {
        path: config_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| schema("config", e.message()))?;
    let dir = config_path.parent().unwrap_or(Path::new("."));
    build_instance(raw, dir)
}

fn build_instance(raw: RawConfig, dir: &Path) -> Result<SimulationInstance, InstanceError> {
    let sim = &raw.simulation;
    if !(sim.horizon_minutes > 0.0 && sim.horizon_minutes.is_finite()) {
        return Err(schema("simulation.horizon_minutes", "must be positive"));
    }
    if !(sim.warmup_minutes >= 0.0) {
        return Err(schema("simulation.warmup_minutes", "must be nonnegative"));
    }
    if sim.warmup_minutes >= sim.horizon_minutes {
        return Err(InstanceError::InvariantViolation(
            "warmup_minutes must be below horizon_minutes".into(),
        ));
    }
    if sim.replications == 0 {
        return Err(schema("simulation.replications", "must be at least 1"));
    }
    let boundary_policy = match sim.slot_boundary_policy.as_str() {
        "keep" => SlotBoundaryPolicy::Keep,
        "resample" => SlotBoundaryPolicy::Resample,
        other => return Err(schema("simulation.slot_boundary_policy", format!("unknown `{other}`"))),
    };
    let location_rule = match sim.location_rule.as_str() {
        "representative" => LocationRule::Representative,
        "empirical_point" => LocationRule::EmpiricalPoint,
        other => return Err(schema("simulation.location_rule", format!("unknown `{other}`"))),
    };
    let classify_by = match raw.kpi.classify_by.as_str() {
        "triage" => CoverageClassification::Triage,
        "onscene" => CoverageClassification::OnScene,
        other => return Err(schema("kpi.classify_by", format!("unknown `{other}`"))),
    };
    let coverage_denominator = match raw.kpi.coverage_denominator.as_str() {
        "class" => CoverageDenominator::Class,
        "all_calls" => CoverageDenominator::AllCalls,
        other => return Err(schema("kpi.coverage_denominator", format!("unknown `{other}`"))),
    };

    let network = build_network(&raw, dir)?;
    let demand = build_demand(&raw, dir, &network, boundary_policy, location_rule)?;
    let service_times = build_catalog(&raw.service_times, dir)?;

    let mut eds = Vec::with_capacity(raw.eds.len());
    unique("ED", raw.eds.iter().map(|e| e.id.as_str()))?;
    for (i, e) in raw.eds.iter().enumerate() {
        let field = format!("eds[{i}]");
        let point = network
            .point(&e.id)
            .ok_or_else(|| InstanceError::CrossRefError(format!("ED point `{}`", e.id)))?;
        if network.kind(point) != PointKind::EmergencyDept {
            return Err(schema(field, format!("point `{}` is not an emergency_dept", e.id)));
        }
        if e.groups.is_empty() {
            return Err(InstanceError::InvariantViolation(format!(
                "ED `{}` belongs to no referral group",
                e.id
            )));
        }
        for g in &e.groups {
            if demand.group_index(g).is_none() {
                return Err(InstanceError::CrossRefError(format!("referral group `{g}`")));
            }
        }
        check_probability(&format!("{field}.aod_probability"), e.aod_probability)?;
        eds.push(EdFacility {
            point,
            groups: e.groups.clone(),
            aod_probability: e.aod_probability,
            aod_delay: e.aod_delay.resolve(dir, &format!("{field}.aod_delay"))?,
        });
    }
    for g in &demand.groups {
        if !eds.iter().any(|e| e.groups.contains(g)) {
            return Err(InstanceError::InvariantViolation(format!(
                "referral group `{g}` has no eligible ED"
            )));
        }
    }

    let t = &raw.severity_transition;
    let severity_transition = [t.red, t.yellow, t.green, t.white];
    for (i, row) in severity_transition.iter().enumerate() {
        let tag = SeverityTag::from_index(i).expect("four tags");
        check_stochastic(&format!("severity_transition row {tag}"), row)?;
    }
    let o = &raw.outcomes;
    let mut outcomes = [OutcomeProbabilities {
        cancel_en_route: 0.0,
        treat_on_site: 0.0,
        transport: 0.0,
    }; 4];
    for (i, r) in [o.red, o.yellow, o.green, o.white].into_iter().enumerate() {
        let tag = SeverityTag::from_index(i).expect("four tags");
        check_stochastic(
            &format!("outcomes.{tag}"),
            &[r.cancel_en_route, r.treat_on_site, r.transport],
        )?;
        outcomes[i] = OutcomeProbabilities {
            cancel_en_route: r.cancel_en_route,
            treat_on_site: r.treat_on_site,
            transport: r.transport,
        };
    }
    check_probability("sanitization.probability", raw.sanitization.probability)?;

    if raw.scenarios.is_empty() {
        return Err(schema("scenarios", "at least one scenario is required"));
    }
    unique("scenario", raw.scenarios.iter().map(|s| s.name.as_str()))?;
    let mut scenarios = Vec::with_capacity(raw.scenarios.len());
    for s in &raw.scenarios {
        scenarios.push(build_scenario(s, &network)?);
    }
    let scenario = match &sim.default_scenario {
        Some(name) => scenarios
            .iter()
            .find(|s| &s.name == name)
            .cloned()
            .ok_or_else(|| InstanceError::CrossRefError(format!("scenario `{name}`")))?,
        None => scenarios[0].clone(),
    };

    check_travel_coverage(&network, &demand, &eds, &scenarios)?;

    Ok(SimulationInstance {
        network,
        demand,
        service_times,
        eds,
        severity_transition,
        outcomes,
        sanitization_probability: raw.sanitization.probability,
        scenarios,
        scenario,
        horizon_minutes: sim.horizon_minutes,
        warmup_minutes: sim.warmup_minutes,
        replications: sim.replications,
        base_seed: sim.base_seed,
        week_start_offset_minutes: sim.week_start_offset_minutes,
        classify_by,
        coverage_denominator,
    })
}

fn build_network(raw: &RawConfig, dir: &Path) -> Result<NetworkModel, InstanceError> {
    let rows: Vec<PointRow> = read_csv(&dir.join(&raw.network.points))?;
    unique("point", rows.iter().map(|r| r.id.as_str()))?;
    let mut points = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        let kind: PointKind = r
            .kind
            .parse()
            .map_err(|e: String| schema(format!("points row {}", i + 2), e))?;
        points.push(GeoPoint {
            id: r.id,
            kind,
            x: r.x,
            y: r.y,
            label: r.label,
        });
    }
    let index: HashMap<&str, PointIdx> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), PointIdx(i)))
        .collect();

    let time_slots: Vec<TimeSlot> = if raw.time_slots.is_empty() {
        five_period_scheme()
    } else {
        raw.time_slots
            .iter()
            .map(|s| TimeSlot {
                id: s.id.clone(),
                pattern: s.pattern.clone(),
                ranges: s.ranges.iter().map(|r| (r[0], r[1])).collect(),
            })
            .collect()
    };
    unique("time slot", time_slots.iter().map(|s| s.id.as_str()))?;
    if let Err(diags) = validate_week_partition(&time_slots) {
        let msg: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(InstanceError::InvariantViolation(format!(
            "time slots do not partition the week: {}",
            msg.join("; ")
        )));
    }
    let calendar = SlotCalendar::new(&time_slots, raw.simulation.week_start_offset_minutes);
    let slot_ids: Vec<String> = time_slots.iter().map(|s| s.id.clone()).collect();

    let kinds: Vec<(String, PointKind)> = points.iter().map(|p| (p.id.clone(), p.kind)).collect();
    let mut travel = TravelTimeModel::new(&kinds, &slot_ids);
    let travel_rows: Vec<TravelRow> = read_csv(&dir.join(&raw.network.travel_times))?;
    for (i, r) in travel_rows.iter().enumerate() {
        let field = format!("travel_times row {}", i + 2);
        let o = *index
            .get(r.origin.as_str())
            .ok_or_else(|| InstanceError::CrossRefError(format!("point `{}`", r.origin)))?;
        let d = *index
            .get(r.destination.as_str())
            .ok_or_else(|| InstanceError::CrossRefError(format!("point `{}`", r.destination)))?;
        let leg: TravelLeg = r.leg.parse().map_err(|e: String| schema(&field, e))?;
        if !(r.t_rs > 0.0 && r.t_rs.is_finite()) {
            return Err(schema(field, "t_rs must be positive"));
        }
        travel.set_nominal(o, d, leg, r.t_rs);
    }

    if let Some(cal) = &raw.network.calibration {
        let rows: Vec<CalibrationRow> = read_csv(&dir.join(cal))?;
        let mut table = CalibrationTable::new();
        for (i, r) in rows.iter().enumerate() {
            let field = format!("calibration row {}", i + 2);
            let leg: TravelLeg = r.leg.parse().map_err(|e: String| schema(&field, e))?;
            let urgency: UrgencyClass = r.urgency.parse().map_err(|e: String| schema(&field, e))?;
            if !slot_ids.contains(&r.slot) {
                return Err(InstanceError::CrossRefError(format!("time slot `{}`", r.slot)));
            }
            if !(r.alpha > 0.0 && r.alpha.is_finite()) {
                return Err(schema(field, "alpha must be positive"));
            }
            table.insert(
                GroupKey {
                    leg,
                    slot: r.slot.clone(),
                    urgency,
                },
                CalibrationEntry {
                    alpha: r.alpha,
                    n_obs: r.n_obs,
                },
            );
        }
        travel.set_calibration(table);
    }
    for (name, delta) in &raw.network.noise_delta {
        let leg: TravelLeg = name.parse().map_err(|e: String| schema("network.noise_delta", e))?;
        if !(*delta >= 0.0 && delta.is_finite()) {
            return Err(schema("network.noise_delta", format!("{name}: delta must be >= 0")));
        }
        travel.set_delta(leg, *delta);
    }
    Ok(NetworkModel::new(points, travel, time_slots, calendar))
}

fn build_demand(
    raw: &RawConfig,
    dir: &Path,
    network: &NetworkModel,
    boundary_policy: SlotBoundaryPolicy,
    location_rule: LocationRule,
) -> Result<DemandModel, InstanceError> {
    let d = &raw.demand;
    unique("demand slot", d.slots.iter().map(|s| s.id.as_str()))?;
    let scheme = DemandSlotScheme::new(
        d.slots.iter().map(|s| (s.id.clone(), s.start)).collect(),
        raw.simulation.week_start_offset_minutes,
    )
    .map_err(|e| schema("demand.slots", e))?;
    unique("referral group", d.groups.iter().map(String::as_str))?;
    if d.groups.is_empty() {
        return Err(schema("demand.groups", "at least one referral group is required"));
    }
    unique("zone", d.zones.iter().map(|z| z.id.as_str()))?;
    let zone_index: HashMap<&str, usize> = d.zones.iter().enumerate().map(|(i, z)| (z.id.as_str(), i)).collect();

    let rows: Vec<SquareRow> = read_csv(&dir.join(&d.squares))?;
    unique("square", rows.iter().map(|r| r.square_id.as_str()))?;
    let mut squares = Vec::with_capacity(rows.len());
    let mut weights: Vec<Vec<(SquareIdx, f64)>> = vec![Vec::new(); d.zones.len()];
    for (i, r) in rows.iter().enumerate() {
        let field = format!("squares row {}", i + 2);
        let zone = *zone_index
            .get(r.zone.as_str())
            .ok_or_else(|| InstanceError::CrossRefError(format!("zone `{}`", r.zone)))?;
        let mut points = Vec::new();
        let alt = r.alt_points.split(';').map(str::trim).filter(|s| !s.is_empty());
        for pid in std::iter::once(r.point_id.as_str()).chain(alt) {
            let p = network
                .point(pid)
                .ok_or_else(|| InstanceError::CrossRefError(format!("point `{pid}`")))?;
            if network.kind(p) != PointKind::DemandSquare {
                return Err(schema(&field, format!("point `{pid}` is not a demand_square")));
            }
            points.push(p);
        }
        if !(r.weight > 0.0 && r.weight.is_finite()) {
            return Err(schema(&field, "weight must be positive"));
        }
        if !(r.area_km2 > 0.0) {
            return Err(schema(&field, "area_km2 must be positive"));
        }
        weights[zone].push((SquareIdx(i), r.weight));
        squares.push(CallSquare {
            id: r.square_id.clone(),
            zone,
            points,
            area_km2: r.area_km2,
        });
    }

    let mut zones = Vec::with_capacity(d.zones.len());
    for (zi, z) in d.zones.iter().enumerate() {
        let field = format!("demand.zones[{}]", z.id);
        if weights[zi].is_empty() {
            return Err(InstanceError::InvariantViolation(format!(
                "zone `{}` has no squares",
                z.id
            )));
        }
        let tags = z.tag_probabilities.to_array();
        check_stochastic(&format!("{field}.tag_probabilities"), &tags)?;
        for k in z.referral.keys() {
            if !d.groups.contains(k) {
                return Err(InstanceError::CrossRefError(format!("referral group `{k}`")));
            }
        }
        let referral: Vec<f64> = d
            .groups
            .iter()
            .map(|g| z.referral.get(g).copied().unwrap_or(0.0))
            .collect();
        check_stochastic(&format!("{field}.referral"), &referral)?;
        for k in z.interarrival.keys() {
            if !scheme.ids().contains(k) {
                return Err(InstanceError::CrossRefError(format!("demand slot `{k}`")));
            }
        }
        let mut interarrival = Vec::with_capacity(scheme.len());
        for sid in scheme.ids() {
            let spec = z
                .interarrival
                .get(sid)
                .ok_or_else(|| schema(format!("{field}.interarrival"), format!("missing slot `{sid}`")))?;
            interarrival.push(spec.resolve(dir, &format!("{field}.interarrival.{sid}"))?);
        }
        zones.push(GenerationZone {
            id: z.id.clone(),
            interarrival,
            square_weights: std::mem::take(&mut weights[zi]),
            tag_probabilities: tags,
            referral,
        });
    }
    Ok(DemandModel {
        scheme,
        zones,
        squares,
        groups: d.groups.clone(),
        boundary_policy,
        location_rule,
    })
}

fn build_catalog(raw: &RawServiceTimes, dir: &Path) -> Result<ServiceTimeCatalog, InstanceError> {
    for (class, map) in [("urgent", &raw.urgent), ("non_urgent", &raw.non_urgent)] {
        for k in map.keys() {
            k.parse::<Phase>()
                .map_err(|e| schema(format!("service_times.{class}"), e))?;
        }
    }
    let mut err = None;
    let catalog = ServiceTimeCatalog::build(|phase, urgency| {
        let (class, map) = match urgency {
            UrgencyClass::Urgent => ("urgent", &raw.urgent),
            UrgencyClass::NonUrgent => ("non_urgent", &raw.non_urgent),
        };
        let spec = map.get(phase.as_str())?;
        match spec.resolve(dir, &format!("service_times.{class}.{phase}")) {
            Ok(d) => Some(d),
            Err(e) => {
                err.get_or_insert(e);
                None
            }
        }
    });
    match catalog {
        Ok(c) => Ok(c),
        Err((phase, urgency)) => {
            Err(err.unwrap_or_else(|| schema(format!("service_times.{urgency}"), format!("missing phase `{phase}`"))))
        }
    }
}

fn build_scenario(s: &RawScenario, network: &NetworkModel) -> Result<FleetScenario, InstanceError> {
    let field = format!("scenarios[{}]", s.name);
    for t in [
        Some(s.dispatch_threshold_minutes),
        s.threshold_urgent,
        s.threshold_non_urgent,
    ]
    .into_iter()
    .flatten()
    {
        if !(t > 0.0) {
            return Err(schema(&field, "dispatch thresholds must be positive"));
        }
    }
    if s.h12_on_minute >= super::MINUTES_PER_DAY || s.h12_off_minute >= super::MINUTES_PER_DAY {
        return Err(schema(&field, "H12 shift minutes must lie within the day"));
    }
    unique("allocation base", s.allocations.iter().map(|a| a.base.as_str()))?;
    let mut allocations = Vec::with_capacity(s.allocations.len());
    for a in &s.allocations {
        let p = network
            .point(&a.base)
            .ok_or_else(|| InstanceError::CrossRefError(format!("base `{}`", a.base)))?;
        if network.kind(p) != PointKind::Base {
            return Err(schema(&field, format!("`{}` is not a base", a.base)));
        }
        allocations.push(BaseAllocation {
            base: a.base.clone(),
            count_h24: a.h24,
            count_h12: a.h12,
        });
    }
    let scenario = FleetScenario {
        name: s.name.clone(),
        allocations,
        dispatch_threshold_minutes: s.dispatch_threshold_minutes,
        threshold_urgent: s.threshold_urgent,
        threshold_non_urgent: s.threshold_non_urgent,
        h12_on_minute: s.h12_on_minute,
        h12_off_minute: s.h12_off_minute,
    };
    if scenario.total_vehicles() == 0 {
        return Err(InstanceError::InvariantViolation(format!(
            "scenario `{}` has no vehicles",
            s.name
        )));
    }
    Ok(scenario)
}

/// Every pair the engine can query must have a nominal time.
fn check_travel_coverage(
    network: &NetworkModel,
    demand: &DemandModel,
    eds: &[EdFacility],
    scenarios: &[FleetScenario],
) -> Result<(), InstanceError> {
    let travel = &network.travel;
    let mut bases: BTreeSet<PointIdx> = BTreeSet::new();
    for s in scenarios {
        for a in s.allocations.iter().filter(|a| a.count_h24 + a.count_h12 > 0) {
            bases.insert(network.point(&a.base).expect("validated"));
        }
    }
    let scenes: BTreeSet<PointIdx> = demand.squares.iter().flat_map(|s| s.points.iter().copied()).collect();
    let missing = |o: PointIdx, d: PointIdx, leg: TravelLeg| {
        InstanceError::CrossRefError(format!(
            "travel time {} -> {} ({leg})",
            network.point_id(o),
            network.point_id(d)
        ))
    };
    let need = |o: PointIdx, d: PointIdx, leg: TravelLeg| {
        travel.nominal(o, d, leg).map(|_| ()).ok_or_else(|| missing(o, d, leg))
    };
    for &s in &scenes {
        for &b in &bases {
            need(b, s, TravelLeg::BaseToScene)?;
            need(s, b, TravelLeg::ReturnToBase)?;
        }
        for e in eds {
            need(s, e.point, TravelLeg::SceneToEd)?;
            need(e.point, s, TravelLeg::EdToScene)?;
        }
        for &s2 in &scenes {
            need(s, s2, TravelLeg::SceneToScene)?;
        }
    }
    for e in eds {
        for &b in &bases {
            need(e.point, b, TravelLeg::ReturnToBase)?;
        }
    }
    Ok(())
}

/// Writes `config.toml` and its data files into `dir`; returns the config path.
/// Loading the result yields an instance equal to `instance`.
pub fn save_instance(instance: &SimulationInstance, dir: &Path) -> Result<PathBuf, InstanceError> {
    fs::create_dir_all(dir).map_err(|e| InstanceError::Io {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let net = &instance.network;

    write_csv(
        &dir.join("points.csv"),
        net.points.iter().map(|p| PointRow {
            id: p.id.clone(),
            kind: p.kind.as_str().to_string(),
            x: p.x,
            y: p.y,
            label: p.label.clone(),
        }),
    )?;
    write_csv(
        &dir.join("travel_times.csv"),
        net.travel.nominal_entries().map(|(o, d, leg, t)| TravelRow {
            origin: net.point_id(o).to_string(),
            destination: net.point_id(d).to_string(),
            leg: leg.as_str().to_string(),
            t_rs: t,
        }),
    )?;
    write_csv(
        &dir.join("calibration.csv"),
        net.travel.calibration().entries().map(|(k, e)| CalibrationRow {
            leg: k.leg.as_str().to_string(),
            slot: k.slot.clone(),
            urgency: k.urgency.as_str().to_string(),
            alpha: e.alpha,
            n_obs: e.n_obs,
        }),
    )?;
    let dm = &instance.demand;
    let square_weight = |i: usize| -> f64 {
        let z = &dm.zones[dm.squares[i].zone];
        z.square_weights
            .iter()
            .find(|w| w.0 .0 == i)
            .map(|w| w.1)
            .expect("square listed in its zone")
    };
    write_csv(
        &dir.join("squares.csv"),
        dm.squares.iter().enumerate().map(|(i, s)| SquareRow {
            square_id: s.id.clone(),
            zone: dm.zones[s.zone].id.clone(),
            point_id: net.point_id(s.points[0]).to_string(),
            weight: square_weight(i),
            area_km2: s.area_km2,
            alt_points: s.points[1..]
                .iter()
                .map(|p| net.point_id(*p))
                .collect::<Vec<_>>()
                .join(";"),
        }),
    )?;

    let mut noise_delta = BTreeMap::new();
    for leg in TravelLeg::ALL {
        let d = net.travel.delta(leg);
        if d > 0.0 {
            noise_delta.insert(leg.as_str().to_string(), d);
        }
    }
    let service = |u: UrgencyClass| -> BTreeMap<String, DistSpec> {
        Phase::ALL
            .iter()
            .map(|&p| {
                (
                    p.as_str().to_string(),
                    DistSpec::from_dist(instance.service_times.get(p, u)),
                )
            })
            .collect()
    };
    let outcome = |t: SeverityTag| {
        let o = instance.outcomes[t.index()];
        RawOutcome {
            cancel_en_route: o.cancel_en_route,
            treat_on_site: o.treat_on_site,
            transport: o.transport,
        }
    };
    let st = &instance.severity_transition;
    let raw = RawConfig {
        simulation: RawSimulation {
            horizon_minutes: instance.horizon_minutes,
            warmup_minutes: instance.warmup_minutes,
            replications: instance.replications,
            base_seed: instance.base_seed,
            week_start_offset_minutes: instance.week_start_offset_minutes,
            slot_boundary_policy: dm.boundary_policy.as_str().to_string(),
            location_rule: dm.location_rule.as_str().to_string(),
            default_scenario: Some(instance.scenario.name.clone()),
        },
        network: RawNetwork {
            points: "points.csv".into(),
            travel_times: "travel_times.csv".into(),
            calibration: Some("calibration.csv".into()),
            noise_delta,
        },
        time_slots: net
            .time_slots
            .iter()
            .map(|s| RawTimeSlot {
                id: s.id.clone(),
                pattern: s.pattern.clone(),
                ranges: s.ranges.iter().map(|&(a, b)| [a, b]).collect(),
            })
            .collect(),
        demand: RawDemand {
            slots: dm
                .scheme
                .ids()
                .iter()
                .zip(dm.scheme.starts())
                .map(|(id, &start)| RawDemandSlot { id: id.clone(), start })
                .collect(),
            squares: "squares.csv".into(),
            groups: dm.groups.clone(),
            zones: dm
                .zones
                .iter()
                .map(|z| RawZone {
                    id: z.id.clone(),
                    tag_probabilities: RawTagVector::from_array(z.tag_probabilities),
                    referral: dm
                        .groups
                        .iter()
                        .zip(&z.referral)
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(g, &p)| (g.clone(), p))
                        .collect(),
                    interarrival: dm
                        .scheme
                        .ids()
                        .iter()
                        .zip(&z.interarrival)
                        .map(|(id, d)| (id.clone(), DistSpec::from_dist(d)))
                        .collect(),
                })
                .collect(),
        },
        service_times: RawServiceTimes {
            urgent: service(UrgencyClass::Urgent),
            non_urgent: service(UrgencyClass::NonUrgent),
        },
        eds: instance
            .eds
            .iter()
            .map(|e| RawEd {
                id: net.point_id(e.point).to_string(),
                groups: e.groups.clone(),
                aod_probability: e.aod_probability,
                aod_delay: DistSpec::from_dist(&e.aod_delay),
            })
            .collect(),
        severity_transition: RawTransition {
            red: st[0],
            yellow: st[1],
            green: st[2],
            white: st[3],
        },
        outcomes: RawOutcomes {
            red: outcome(SeverityTag::Red),
            yellow: outcome(SeverityTag::Yellow),
            green: outcome(SeverityTag::Green),
            white: outcome(SeverityTag::White),
        },
        sanitization: RawSanitization {
            probability: instance.sanitization_probability,
        },
        kpi: RawKpi {
            classify_by: instance.classify_by.as_str().to_string(),
            coverage_denominator: instance.coverage_denominator.as_str().to_string(),
        },
        scenarios: instance
            .scenarios
            .iter()
            .map(|s| RawScenario {
                name: s.name.clone(),
                dispatch_threshold_minutes: s.dispatch_threshold_minutes,
                threshold_urgent: s.threshold_urgent,
                threshold_non_urgent: s.threshold_non_urgent,
                h12_on_minute: s.h12_on_minute,
                h12_off_minute: s.h12_off_minute,
                allocations: s
                    .allocations
                    .iter()
                    .map(|a| RawAllocation {
                        base: a.base.clone(),
                        h24: a.count_h24,
                        h12: a.count_h12,
                    })
                    .collect(),
            })
            .collect(),
    };
    let text = toml::to_string(&raw).map_err(|e| schema("config", e))?;
    let path = dir.join("config.toml");
    fs::write(&path, text).map_err(|e| InstanceError::Io {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    Ok(path)
}
