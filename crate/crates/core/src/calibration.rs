//! Travel-time calibration: multiplicative correction factors estimated from
//! historical trips, and the calibrated travel-time model used by the engine.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{PointIdx, PointKind, UrgencyClass};
use crate::stochastic::{sample_triangular_travel, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TravelLeg {
    BaseToScene,
    SceneToEd,
    SceneToScene,
    EdToScene,
    ReturnToBase,
}

impl TravelLeg {
    pub const ALL: [TravelLeg; 5] = [
        TravelLeg::BaseToScene,
        TravelLeg::SceneToEd,
        TravelLeg::SceneToScene,
        TravelLeg::EdToScene,
        TravelLeg::ReturnToBase,
    ];

    pub fn index(self) -> usize {
        match self {
            TravelLeg::BaseToScene => 0,
            TravelLeg::SceneToEd => 1,
            TravelLeg::SceneToScene => 2,
            TravelLeg::EdToScene => 3,
            TravelLeg::ReturnToBase => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TravelLeg::BaseToScene => "base_to_scene",
            TravelLeg::SceneToEd => "scene_to_ed",
            TravelLeg::SceneToScene => "scene_to_scene",
            TravelLeg::EdToScene => "ed_to_scene",
            TravelLeg::ReturnToBase => "return_to_base",
        }
    }
}

impl fmt::Display for TravelLeg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TravelLeg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TravelLeg::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s.trim())
            .ok_or_else(|| format!("unknown travel leg `{s}`"))
    }
}

/// One historical trip: nominal routing time versus observed time.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationObservation {
    pub leg: TravelLeg,
    pub slot: String,
    pub urgency: UrgencyClass,
    pub t_rs: f64,
    pub t_obs: f64,
}

impl CalibrationObservation {
    pub fn ratio(&self) -> f64 {
        self.t_obs / self.t_rs
    }

    pub fn key(&self) -> GroupKey {
        GroupKey {
            leg: self.leg,
            slot: self.slot.clone(),
            urgency: self.urgency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub leg: TravelLeg,
    pub slot: String,
    pub urgency: UrgencyClass,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("no observations for this group; the factor defaults to 1")]
    EmptyObservations,
    #[error("observations span more than one (leg, slot, urgency) group")]
    MixedGroups,
    #[error("observation times must be positive and finite")]
    NonPositiveTime,
    #[error("ratio bounds must satisfy 0 < lo < hi (got {lo}, {hi})")]
    BadBounds { lo: f64, hi: f64 },
    #[error("no nominal travel time from `{origin}` to `{destination}` on leg {leg}")]
    UnknownPair {
        origin: String,
        destination: String,
        leg: TravelLeg,
    },
}

/// Accepted band for `t_obs / t_rs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioBounds {
    lo: f64,
    hi: f64,
}

impl RatioBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self, CalibrationError> {
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(CalibrationError::BadBounds { lo, hi });
        }
        Ok(RatioBounds { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }
}

impl Default for RatioBounds {
    fn default() -> Self {
        RatioBounds { lo: 0.2, hi: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<CalibrationObservation>,
    pub removed: Vec<CalibrationObservation>,
}

/// Consistency filter: keeps observations whose ratio lies in `[lo, hi]`.
pub fn filter_observations(raw: &[CalibrationObservation], bounds: RatioBounds) -> FilterOutcome {
    let (kept, removed) = raw.iter().cloned().partition(|o| {
        let r = o.ratio();
        r >= bounds.lo && r <= bounds.hi
    });
    FilterOutcome { kept, removed }
}

/// `argmin_{alpha > 0} sum |alpha * t_rs - t_obs|` over one group.
///
/// The objective equals `sum t_rs * |alpha - t_obs / t_rs|`, so the minimiser
/// is the `t_rs`-weighted median of the ratios. When the cumulative weight
/// hits exactly half, the objective is flat up to the next ratio and the lower
/// breakpoint is returned.
pub fn estimate_alpha(obs: &[CalibrationObservation]) -> Result<f64, CalibrationError> {
    let first = obs.first().ok_or(CalibrationError::EmptyObservations)?;
    if obs
        .iter()
        .any(|o| o.leg != first.leg || o.slot != first.slot || o.urgency != first.urgency)
    {
        return Err(CalibrationError::MixedGroups);
    }
    let pairs: Vec<(f64, f64)> = obs.iter().map(|o| (o.t_rs, o.t_obs)).collect();
    weighted_median_ratio(&pairs)
}

/// Core of [`estimate_alpha`] over `(t_rs, t_obs)` pairs.
pub fn weighted_median_ratio(pairs: &[(f64, f64)]) -> Result<f64, CalibrationError> {
    if pairs.is_empty() {
        return Err(CalibrationError::EmptyObservations);
    }
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    for &(t_rs, t_obs) in pairs {
        if !(t_rs > 0.0 && t_obs > 0.0 && t_rs.is_finite() && t_obs.is_finite()) {
            return Err(CalibrationError::NonPositiveTime);
        }
        points.push((t_obs / t_rs, t_rs));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = points.iter().map(|p| p.1).sum();
    let half = 0.5 * total;
    // Relative slack so a tie that is exact in real arithmetic still lands on
    // the lower breakpoint after rounding.
    let slack = 1e-12 * total;
    let mut cum = 0.0;
    for &(ratio, weight) in &points {
        cum += weight;
        if cum >= half - slack {
            return Ok(ratio);
        }
    }
    Ok(points.last().expect("nonempty").0)
}

/// Value of the L1 objective at `alpha`.
pub fn l1_objective(pairs: &[(f64, f64)], alpha: f64) -> f64 {
    pairs.iter().map(|&(t_rs, t_obs)| (alpha * t_rs - t_obs).abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSettings {
    pub min_count: usize,
    pub ratio_bounds: RatioBounds,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            min_count: 5,
            ratio_bounds: RatioBounds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationEntry {
    pub alpha: f64,
    pub n_obs: usize,
}

/// Correction factors per (leg, slot, urgency); absent keys mean 1.0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationTable {
    entries: BTreeMap<GroupKey, CalibrationEntry>,
}

impl CalibrationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: GroupKey, entry: CalibrationEntry) {
        assert!(entry.alpha > 0.0 && entry.alpha.is_finite(), "alpha must be positive");
        self.entries.insert(key, entry);
    }

    pub fn alpha(&self, leg: TravelLeg, slot: &str, urgency: UrgencyClass) -> f64 {
        // BTreeMap lookup needs an owned key; tables are small.
        self.entries
            .iter()
            .find(|(k, _)| k.leg == leg && k.urgency == urgency && k.slot == slot)
            .map(|(_, e)| e.alpha)
            .unwrap_or(1.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&GroupKey, &CalibrationEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupStatus {
    pub n_raw: usize,
    pub n_kept: usize,
    pub estimated: bool,
}

/// Which groups got a factor and which fell back to the default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoverageReport {
    pub groups: BTreeMap<GroupKey, GroupStatus>,
    pub removed_by_filter: usize,
}

impl CoverageReport {
    /// Adds zero-count entries for every (leg, slot, urgency) combination of
    /// `slots` not already present, so the report covers the full grid.
    pub fn with_universe(mut self, slots: &[String]) -> Self {
        for leg in TravelLeg::ALL {
            for slot in slots {
                for urgency in UrgencyClass::ALL {
                    self.groups
                        .entry(GroupKey {
                            leg,
                            slot: slot.clone(),
                            urgency,
                        })
                        .or_insert(GroupStatus {
                            n_raw: 0,
                            n_kept: 0,
                            estimated: false,
                        });
                }
            }
        }
        self
    }

    pub fn defaulted(&self) -> impl Iterator<Item = &GroupKey> {
        self.groups.iter().filter(|(_, s)| !s.estimated).map(|(k, _)| k)
    }

    pub fn defaulted_pct(&self) -> f64 {
        if self.groups.is_empty() {
            return 100.0;
        }
        100.0 * self.defaulted().count() as f64 / self.groups.len() as f64
    }
}

/// Filters, groups, and estimates one factor per group with at least
/// `min_count` surviving observations.
pub fn build_table(
    all_obs: &[CalibrationObservation],
    settings: &CalibrationSettings,
) -> Result<(CalibrationTable, CoverageReport), CalibrationError> {
    let min_count = settings.min_count.max(1);
    let mut raw_counts: BTreeMap<GroupKey, usize> = BTreeMap::new();
    for o in all_obs {
        *raw_counts.entry(o.key()).or_default() += 1;
    }
    let filtered = filter_observations(all_obs, settings.ratio_bounds);
    let mut groups: BTreeMap<GroupKey, Vec<(f64, f64)>> = BTreeMap::new();
    for o in &filtered.kept {
        groups.entry(o.key()).or_default().push((o.t_rs, o.t_obs));
    }
    let mut table = CalibrationTable::new();
    let mut report = CoverageReport {
        removed_by_filter: filtered.removed.len(),
        ..Default::default()
    };
    for (key, n_raw) in raw_counts {
        let pairs = groups.get(&key).map(Vec::as_slice).unwrap_or(&[]);
        let estimated = pairs.len() >= min_count;
        if estimated {
            let alpha = weighted_median_ratio(pairs)?;
            table.insert(
                key.clone(),
                CalibrationEntry {
                    alpha,
                    n_obs: pairs.len(),
                },
            );
        }
        report.groups.insert(
            key,
            GroupStatus {
                n_raw,
                n_kept: pairs.len(),
                estimated,
            },
        );
    }
    Ok((table, report))
}

/// Nominal routing times plus correction factors and scene-location noise.
#[derive(Debug, Clone)]
pub struct TravelTimeModel {
    n_points: usize,
    point_ids: Vec<String>,
    kinds: Vec<PointKind>,
    // [leg][origin * n + destination], NaN when absent.
    nominal: Vec<Vec<f64>>,
    // [leg][slot][urgency]
    alpha: Vec<Vec<[f64; 2]>>,
    delta: [f64; 5],
    table: CalibrationTable,
    slot_ids: Vec<String>,
}

impl PartialEq for TravelTimeModel {
    fn eq(&self, other: &Self) -> bool {
        let same_bits = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
        };
        self.point_ids == other.point_ids
            && self.kinds == other.kinds
            && same_bits(&self.nominal, &other.nominal)
            && self.alpha == other.alpha
            && self.delta == other.delta
            && self.table == other.table
            && self.slot_ids == other.slot_ids
    }
}

impl TravelTimeModel {
    /// `points` gives `(id, kind)` in index order; `slot_ids` the calibration
    /// slots in calendar order.
    pub fn new(points: &[(String, PointKind)], slot_ids: &[String]) -> Self {
        let n = points.len();
        TravelTimeModel {
            n_points: n,
            point_ids: points.iter().map(|p| p.0.clone()).collect(),
            kinds: points.iter().map(|p| p.1).collect(),
            nominal: vec![vec![f64::NAN; n * n]; TravelLeg::ALL.len()],
            alpha: vec![vec![[1.0, 1.0]; slot_ids.len()]; TravelLeg::ALL.len()],
            delta: [0.0; 5],
            table: CalibrationTable::new(),
            slot_ids: slot_ids.to_vec(),
        }
    }

    pub fn set_nominal(&mut self, origin: PointIdx, destination: PointIdx, leg: TravelLeg, minutes: f64) {
        assert!(minutes > 0.0 && minutes.is_finite(), "nominal times must be positive");
        self.nominal[leg.index()][origin.0 * self.n_points + destination.0] = minutes;
    }

    pub fn nominal(&self, origin: PointIdx, destination: PointIdx, leg: TravelLeg) -> Option<f64> {
        let v = self.nominal[leg.index()][origin.0 * self.n_points + destination.0];
        (!v.is_nan()).then_some(v)
    }

    /// Stored `(origin, destination, leg, minutes)` entries in a fixed order.
    pub fn nominal_entries(&self) -> impl Iterator<Item = (PointIdx, PointIdx, TravelLeg, f64)> + '_ {
        TravelLeg::ALL.into_iter().flat_map(move |leg| {
            let row = &self.nominal[leg.index()];
            (0..self.n_points).flat_map(move |o| {
                (0..self.n_points).filter_map(move |d| {
                    let v = row[o * self.n_points + d];
                    (!v.is_nan()).then_some((PointIdx(o), PointIdx(d), leg, v))
                })
            })
        })
    }

    pub fn set_calibration(&mut self, table: CalibrationTable) {
        for leg in TravelLeg::ALL {
            for (si, slot) in self.slot_ids.iter().enumerate() {
                for u in UrgencyClass::ALL {
                    self.alpha[leg.index()][si][u.index()] = table.alpha(leg, slot, u);
                }
            }
        }
        self.table = table;
    }

    pub fn calibration(&self) -> &CalibrationTable {
        &self.table
    }

    pub fn set_delta(&mut self, leg: TravelLeg, delta: f64) {
        assert!(delta >= 0.0 && delta.is_finite());
        self.delta[leg.index()] = delta;
    }

    pub fn delta(&self, leg: TravelLeg) -> f64 {
        self.delta[leg.index()]
    }

    pub fn slot_ids(&self) -> &[String] {
        &self.slot_ids
    }

    pub fn alpha(&self, leg: TravelLeg, slot: usize, urgency: UrgencyClass) -> f64 {
        self.alpha[leg.index()][slot][urgency.index()]
    }

    /// `alpha * T_RS`, without noise.
    pub fn estimate(
        &self,
        origin: PointIdx,
        destination: PointIdx,
        leg: TravelLeg,
        slot: usize,
        urgency: UrgencyClass,
    ) -> Result<f64, CalibrationError> {
        let t = self
            .nominal(origin, destination, leg)
            .ok_or_else(|| CalibrationError::UnknownPair {
                origin: self.point_ids[origin.0].clone(),
                destination: self.point_ids[destination.0].clone(),
                leg,
            })?;
        Ok(self.alpha(leg, slot, urgency) * t)
    }

    /// Calibrated travel time; with a stream and a demand-square destination
    /// the estimate is perturbed by `Triangular(t - delta, t, t + delta)`.
    pub fn travel_time(
        &self,
        origin: PointIdx,
        destination: PointIdx,
        leg: TravelLeg,
        slot: usize,
        urgency: UrgencyClass,
        stream: Option<&mut RngStream>,
    ) -> Result<f64, CalibrationError> {
        let t = self.estimate(origin, destination, leg, slot, urgency)?;
        match stream {
            Some(s) if self.kinds[destination.0] == PointKind::DemandSquare => {
                Ok(sample_triangular_travel(t, self.delta[leg.index()], s))
            }
            _ => Ok(t),
        }
    }
}
