//! Call generation: per-zone interarrival times by daily slot, then a call
//! square drawn by historical spatial density.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::model::{PointIdx, SeverityTag, MINUTES_PER_DAY};
use crate::stochastic::{DistributionRef, RngStream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DemandError {
    #[error("historical call list is empty")]
    EmptyHistory,
    #[error("cell area must be positive, got {0}")]
    BadCellArea(f64),
    #[error("daily slot scheme must start at minute 0 with strictly increasing starts below 1440")]
    BadScheme,
}

/// What happens when an interarrival draw crosses into the next daily slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SlotBoundaryPolicy {
    /// The draw stands.
    #[default]
    Keep,
    /// Discard the draw and restart at the boundary with the new slot's
    /// distribution (exact for exponential interarrivals).
    Resample,
}

impl SlotBoundaryPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotBoundaryPolicy::Keep => "keep",
            SlotBoundaryPolicy::Resample => "resample",
        }
    }
}

/// Where inside a square a call is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LocationRule {
    #[default]
    Representative,
    /// Uniform over the square's historical call points.
    EmpiricalPoint,
}

impl LocationRule {
    pub fn as_str(self) -> &'static str {
        match self {
            LocationRule::Representative => "representative",
            LocationRule::EmpiricalPoint => "empirical_point",
        }
    }
}

/// Partition of the day into interarrival slots, e.g. 00-07, 07-12, 12-18, 18-24.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSlotScheme {
    ids: Vec<String>,
    starts: Vec<u32>,
    offset_minutes: u32,
}

impl DemandSlotScheme {
    /// `slots` are `(id, start_minute_of_day)`; `offset_minutes` is the
    /// minute of day (or week) at simulation time 0.
    pub fn new(slots: Vec<(String, u32)>, offset_minutes: u32) -> Result<Self, DemandError> {
        if slots.is_empty() || slots[0].1 != 0 {
            return Err(DemandError::BadScheme);
        }
        if slots.windows(2).any(|w| w[1].1 <= w[0].1) || slots.last().unwrap().1 >= MINUTES_PER_DAY {
            return Err(DemandError::BadScheme);
        }
        let (ids, starts) = slots.into_iter().unzip();
        Ok(DemandSlotScheme {
            ids,
            starts,
            offset_minutes: offset_minutes % MINUTES_PER_DAY,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn starts(&self) -> &[u32] {
        &self.starts
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Length of slot `i` in minutes per day.
    pub fn slot_length(&self, i: usize) -> u32 {
        let end = self.starts.get(i + 1).copied().unwrap_or(MINUTES_PER_DAY);
        end - self.starts[i]
    }

    pub fn minute_of_day(&self, sim_minute: f64) -> f64 {
        (sim_minute + self.offset_minutes as f64).rem_euclid(MINUTES_PER_DAY as f64)
    }

    /// Slot in force at `sim_minute` and the simulation time at which it ends.
    pub fn locate(&self, sim_minute: f64) -> (usize, f64) {
        let md = self.minute_of_day(sim_minute);
        let idx = self.starts.partition_point(|&s| (s as f64) <= md) - 1;
        let end_md = self.starts.get(idx + 1).copied().unwrap_or(MINUTES_PER_DAY) as f64;
        (idx, sim_minute + (end_md - md))
    }

    pub fn slot_at(&self, sim_minute: f64) -> usize {
        self.locate(sim_minute).0
    }
}

/// Index into [`DemandModel::squares`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SquareIdx(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct CallSquare {
    pub id: String,
    pub zone: usize,
    /// `points[0]` is the representative point; any further entries are
    /// historical call locations used by [`LocationRule::EmpiricalPoint`].
    pub points: Vec<PointIdx>,
    pub area_km2: f64,
}

impl CallSquare {
    pub fn representative(&self) -> PointIdx {
        self.points[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationZone {
    pub id: String,
    /// One distribution per demand slot, in scheme order.
    pub interarrival: Vec<DistributionRef>,
    /// Squares of this zone with positive weights (historical call counts).
    pub square_weights: Vec<(SquareIdx, f64)>,
    /// Triage tag probabilities, indexed by [`SeverityTag::index`].
    pub tag_probabilities: [f64; 4],
    /// Referral (pathology) group probabilities, indexed like
    /// [`DemandModel::groups`].
    pub referral: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandModel {
    pub scheme: DemandSlotScheme,
    pub zones: Vec<GenerationZone>,
    pub squares: Vec<CallSquare>,
    pub groups: Vec<String>,
    pub boundary_policy: SlotBoundaryPolicy,
    pub location_rule: LocationRule,
}

impl DemandModel {
    pub fn group_index(&self, id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == id)
    }
}

/// Time of the next call in `zone` after `now`.
///
/// Slots whose distribution is the `never` sentinel are skipped to their end
/// under either policy; a zone that never fires in any slot yields `+inf`.
pub fn next_arrival(
    zone: &GenerationZone,
    now: f64,
    scheme: &DemandSlotScheme,
    policy: SlotBoundaryPolicy,
    stream: &mut RngStream,
) -> f64 {
    if zone.interarrival.iter().all(DistributionRef::is_never) {
        return f64::INFINITY;
    }
    let mut t = now;
    loop {
        let (slot, slot_end) = scheme.locate(t);
        let dist = &zone.interarrival[slot];
        if dist.is_never() {
            t = slot_end;
            continue;
        }
        let candidate = t + dist.sample(stream);
        match policy {
            SlotBoundaryPolicy::Keep => return candidate,
            SlotBoundaryPolicy::Resample => {
                if candidate < slot_end {
                    return candidate;
                }
                t = slot_end;
            }
        }
    }
}

/// Categorical draw of a square proportional to the zone's weights.
pub fn pick_square(zone: &GenerationZone, stream: &mut RngStream) -> SquareIdx {
    let weights: Vec<f64> = zone.square_weights.iter().map(|w| w.1).collect();
    let i = stream.categorical(&weights).expect("zone has positive weights");
    zone.square_weights[i].0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CallStatus {
    Queued,
    Assigned,
    EnRoute,
    /// Ambulance on scene, mission not yet closed.
    Served,
    CancelledEnRoute,
    ClosedOnSite,
    Transported,
}

impl CallStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            CallStatus::CancelledEnRoute | CallStatus::ClosedOnSite | CallStatus::Transported
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CallStatus::Queued => "queued",
            CallStatus::Assigned => "assigned",
            CallStatus::EnRoute => "en_route",
            CallStatus::Served => "served",
            CallStatus::CancelledEnRoute => "cancelled_en_route",
            CallStatus::ClosedOnSite => "closed_on_site",
            CallStatus::Transported => "transported",
        }
    }
}

impl fmt::Display for CallStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Timestamp trail of a call, in simulation minutes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CallTimestamps {
    pub triage_done: Option<f64>,
    pub assigned: Option<f64>,
    pub depart: Option<f64>,
    pub arrive_scene: Option<f64>,
    pub depart_scene: Option<f64>,
    pub arrive_ed: Option<f64>,
    pub offload_start: Option<f64>,
    pub offload_done: Option<f64>,
    pub mission_end: Option<f64>,
}

impl CallTimestamps {
    /// The trail in lifecycle order.
    pub fn ordered(&self) -> [Option<f64>; 9] {
        [
            self.triage_done,
            self.assigned,
            self.depart,
            self.arrive_scene,
            self.depart_scene,
            self.arrive_ed,
            self.offload_start,
            self.offload_done,
            self.mission_end,
        ]
    }

    /// Present timestamps never decrease along the trail, starting from `arrival`.
    pub fn is_monotone(&self, arrival: f64) -> bool {
        let mut last = arrival;
        for t in self.ordered().into_iter().flatten() {
            if t < last {
                return false;
            }
            last = t;
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmergencyCall {
    pub call_id: u64,
    pub arrival_minute: f64,
    pub zone: usize,
    pub square: SquareIdx,
    /// Scene location (a demand-square point).
    pub scene: PointIdx,
    pub triage_tag: SeverityTag,
    pub onscene_tag: Option<SeverityTag>,
    pub pathology_group: usize,
    pub times: CallTimestamps,
    pub status: CallStatus,
}

impl EmergencyCall {
    /// Tag currently known: the on-scene revision if any, else triage.
    pub fn current_tag(&self) -> SeverityTag {
        self.onscene_tag.unwrap_or(self.triage_tag)
    }
}

/// Creates the call fired by `zone` at `now`: square by spatial density,
/// triage tag and pathology group from the zone's categorical distributions.
pub fn spawn_call(
    demand: &DemandModel,
    zone_idx: usize,
    call_id: u64,
    now: f64,
    stream: &mut RngStream,
) -> EmergencyCall {
    let zone = &demand.zones[zone_idx];
    let square = pick_square(zone, stream);
    let sq = &demand.squares[square.0];
    let scene = match demand.location_rule {
        LocationRule::Representative => sq.representative(),
        LocationRule::EmpiricalPoint => sq.points[stream.index(sq.points.len())],
    };
    let tag_i = stream
        .categorical(&zone.tag_probabilities)
        .expect("tag probabilities sum to one");
    let group = stream
        .categorical(&zone.referral)
        .expect("referral probabilities sum to one");
    EmergencyCall {
        call_id,
        arrival_minute: now,
        zone: zone_idx,
        square,
        scene,
        triage_tag: SeverityTag::from_index(tag_i).expect("four tags"),
        onscene_tag: None,
        pathology_group: group,
        times: CallTimestamps::default(),
        status: CallStatus::Queued,
    }
}

/// A historical call location, optionally labelled with its zone.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalCall {
    pub x: f64,
    pub y: f64,
    pub zone: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub square_id: String,
    pub row: usize,
    pub col: usize,
    pub zone: Option<String>,
    pub cx: f64,
    pub cy: f64,
    /// Index into the input call list of the representative call.
    pub representative: usize,
    pub rep_x: f64,
    pub rep_y: f64,
    pub weight: u64,
    /// Input indices of every call in the cell, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandGrid {
    pub side_m: f64,
    pub bbox: BoundingBox,
    pub cells: Vec<GridCell>,
}

/// Buckets calls into square cells of `cell_area_km2` over `bbox` (default:
/// the calls' extent). Empty cells are dropped; each kept cell's weight is its
/// call count and its representative is the call nearest the centroid
/// (ties to the lowest input index). The cell zone is the majority zone of its
/// calls, ties to the lexicographically smallest id.
pub fn build_demand_grid(
    calls: &[HistoricalCall],
    cell_area_km2: f64,
    bbox: Option<BoundingBox>,
) -> Result<DemandGrid, DemandError> {
    if calls.is_empty() {
        return Err(DemandError::EmptyHistory);
    }
    if !(cell_area_km2 > 0.0 && cell_area_km2.is_finite()) {
        return Err(DemandError::BadCellArea(cell_area_km2));
    }
    let side = cell_area_km2.sqrt() * 1000.0;
    let bbox = bbox.unwrap_or_else(|| BoundingBox {
        min_x: calls.iter().map(|c| c.x).fold(f64::INFINITY, f64::min),
        min_y: calls.iter().map(|c| c.y).fold(f64::INFINITY, f64::min),
        max_x: calls.iter().map(|c| c.x).fold(f64::NEG_INFINITY, f64::max),
        max_y: calls.iter().map(|c| c.y).fold(f64::NEG_INFINITY, f64::max),
    });
    let ncols = (((bbox.max_x - bbox.min_x) / side).floor() as usize) + 1;
    let nrows = (((bbox.max_y - bbox.min_y) / side).floor() as usize) + 1;
    let mut buckets: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, c) in calls.iter().enumerate() {
        let col = (((c.x - bbox.min_x) / side).floor().max(0.0) as usize).min(ncols - 1);
        let row = (((c.y - bbox.min_y) / side).floor().max(0.0) as usize).min(nrows - 1);
        buckets.entry((row, col)).or_default().push(i);
    }
    let cells = buckets
        .into_iter()
        .map(|((row, col), members)| {
            let cx = bbox.min_x + (col as f64 + 0.5) * side;
            let cy = bbox.min_y + (row as f64 + 0.5) * side;
            let mut rep = members[0];
            let mut best = f64::INFINITY;
            for &m in &members {
                let d = (calls[m].x - cx).powi(2) + (calls[m].y - cy).powi(2);
                if d < best {
                    best = d;
                    rep = m;
                }
            }
            let mut zone_counts: BTreeMap<&str, usize> = BTreeMap::new();
            for &m in &members {
                if let Some(z) = &calls[m].zone {
                    *zone_counts.entry(z.as_str()).or_default() += 1;
                }
            }
            let mut zone: Option<(&str, usize)> = None;
            for (z, n) in zone_counts {
                if zone.map(|(_, best)| n > best).unwrap_or(true) {
                    zone = Some((z, n));
                }
            }
            GridCell {
                square_id: format!("Q{row:03}_{col:03}"),
                row,
                col,
                zone: zone.map(|z| z.0.to_string()),
                cx,
                cy,
                representative: rep,
                rep_x: calls[rep].x,
                rep_y: calls[rep].y,
                weight: members.len() as u64,
                members,
            }
        })
        .collect();
    Ok(DemandGrid {
        side_m: side,
        bbox,
        cells,
    })
}
