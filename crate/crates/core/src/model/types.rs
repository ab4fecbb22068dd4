use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Triage / on-scene colour code.
///
/// Ordering follows clinical priority: `Red > Yellow > Green > White`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityTag {
    Red,
    Yellow,
    Green,
    White,
}

impl SeverityTag {
    pub const ALL: [SeverityTag; 4] = [
        SeverityTag::Red,
        SeverityTag::Yellow,
        SeverityTag::Green,
        SeverityTag::White,
    ];

    /// Position in [`SeverityTag::ALL`]; also the row/column index of the
    /// severity transition matrix.
    pub fn index(self) -> usize {
        match self {
            SeverityTag::Red => 0,
            SeverityTag::Yellow => 1,
            SeverityTag::Green => 2,
            SeverityTag::White => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Higher is more urgent.
    pub fn rank(self) -> u8 {
        3 - self.index() as u8
    }

    pub fn urgency(self) -> UrgencyClass {
        match self {
            SeverityTag::Red | SeverityTag::Yellow => UrgencyClass::Urgent,
            SeverityTag::Green | SeverityTag::White => UrgencyClass::NonUrgent,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SeverityTag::Red => "red",
            SeverityTag::Yellow => "yellow",
            SeverityTag::Green => "green",
            SeverityTag::White => "white",
        }
    }
}

impl PartialOrd for SeverityTag {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SeverityTag {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl fmt::Display for SeverityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SeverityTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "red" => Ok(SeverityTag::Red),
            "yellow" => Ok(SeverityTag::Yellow),
            "green" => Ok(SeverityTag::Green),
            "white" => Ok(SeverityTag::White),
            other => Err(format!("unknown severity tag `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrgencyClass {
    Urgent,
    NonUrgent,
}

impl UrgencyClass {
    pub const ALL: [UrgencyClass; 2] = [UrgencyClass::Urgent, UrgencyClass::NonUrgent];

    pub fn index(self) -> usize {
        match self {
            UrgencyClass::Urgent => 0,
            UrgencyClass::NonUrgent => 1,
        }
    }

    pub fn rank(self) -> u8 {
        match self {
            UrgencyClass::Urgent => 1,
            UrgencyClass::NonUrgent => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UrgencyClass::Urgent => "urgent",
            UrgencyClass::NonUrgent => "non_urgent",
        }
    }
}

impl fmt::Display for UrgencyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UrgencyClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "urgent" => Ok(UrgencyClass::Urgent),
            "non_urgent" | "nonurgent" => Ok(UrgencyClass::NonUrgent),
            other => Err(format!("unknown urgency class `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Base,
    DemandSquare,
    EmergencyDept,
}

impl PointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PointKind::Base => "base",
            PointKind::DemandSquare => "demand_square",
            PointKind::EmergencyDept => "emergency_dept",
        }
    }
}

impl FromStr for PointKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(PointKind::Base),
            "demand_square" | "square" => Ok(PointKind::DemandSquare),
            "emergency_dept" | "ed" => Ok(PointKind::EmergencyDept),
            other => Err(format!("unknown point kind `{other}`")),
        }
    }
}

/// A location in planar metres. Coordinates are used for grid construction
/// and reporting only; travel always comes from the travel-time tables.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoPoint {
    pub id: String,
    pub kind: PointKind,
    pub x: f64,
    pub y: f64,
    pub label: String,
}

/// Index of a point inside [`crate::model::SimulationInstance::points`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointIdx(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Bls,
    Als,
}

/// Shift pattern of an ambulance; minutes are within the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schedule {
    H24,
    H12 { on_minute: u32, off_minute: u32 },
}

impl Schedule {
    pub const DEFAULT_H12_ON: u32 = 480;
    pub const DEFAULT_H12_OFF: u32 = 1200;

    /// Whether the unit is on shift at `minute_of_day`.
    pub fn on_shift_at(self, minute_of_day: f64) -> bool {
        match self {
            Schedule::H24 => true,
            Schedule::H12 { on_minute, off_minute } => {
                let (on, off) = (on_minute as f64, off_minute as f64);
                if on < off {
                    minute_of_day >= on && minute_of_day < off
                } else {
                    minute_of_day >= on || minute_of_day < off
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ambulance {
    pub id: String,
    pub home_base: PointIdx,
    pub schedule: Schedule,
    pub vehicle_class: VehicleClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseAllocation {
    pub base: String,
    pub count_h24: u32,
    pub count_h12: u32,
}

/// A deployment of ambulances over bases; the unit of scenario comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetScenario {
    pub name: String,
    pub allocations: Vec<BaseAllocation>,
    pub dispatch_threshold_minutes: f64,
    /// Optional per-class override of `dispatch_threshold_minutes`.
    pub threshold_urgent: Option<f64>,
    pub threshold_non_urgent: Option<f64>,
    pub h12_on_minute: u32,
    pub h12_off_minute: u32,
}

impl FleetScenario {
    pub fn threshold(&self, urgency: UrgencyClass) -> f64 {
        let over = match urgency {
            UrgencyClass::Urgent => self.threshold_urgent,
            UrgencyClass::NonUrgent => self.threshold_non_urgent,
        };
        over.unwrap_or(self.dispatch_threshold_minutes)
    }

    pub fn total_vehicles(&self) -> u32 {
        self.allocations.iter().map(|a| a.count_h24 + a.count_h12).sum()
    }
}
