use std::io::{self, Write};

use sha2::{Digest, Sha256};

use super::{DispatchOrigin, EventKind};
use crate::demand::{CallStatus, EmergencyCall};
use crate::model::SimulationInstance;

pub const EVENT_LOG_HEADER: &str = "time_minute,seq,kind,call_id,ambulance_id";

#[derive(Debug, Clone, PartialEq)]
pub struct EventLogEntry {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub call_id: Option<u64>,
    pub ambulance_id: Option<String>,
}

impl EventLogEntry {
    pub fn to_line(&self) -> String {
        format_line(
            self.time,
            self.seq,
            self.kind,
            self.call_id,
            self.ambulance_id.as_deref(),
        )
    }
}

fn format_line(time: f64, seq: u64, kind: EventKind, call: Option<u64>, amb: Option<&str>) -> String {
    let call = call.map(|c| c.to_string()).unwrap_or_default();
    format!("{time:.6},{seq},{},{call},{}", kind.as_str(), amb.unwrap_or(""))
}

/// Canonical event log. The SHA-256 covers the exact text of the log file
/// (header plus one `\n`-terminated line per event) and is kept even when
/// the entries themselves are dropped.
#[derive(Debug, Clone)]
pub struct EventLog {
    keep: bool,
    entries: Vec<EventLogEntry>,
    count: u64,
    hasher: Sha256,
}

impl EventLog {
    pub fn new(keep: bool) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(EVENT_LOG_HEADER.as_bytes());
        hasher.update(b"\n");
        EventLog {
            keep,
            entries: Vec::new(),
            count: 0,
            hasher,
        }
    }

    pub fn push(&mut self, time: f64, seq: u64, kind: EventKind, call: Option<u64>, amb: Option<&str>) {
        let line = format_line(time, seq, kind, call, amb);
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.count += 1;
        if self.keep {
            self.entries.push(EventLogEntry {
                time,
                seq,
                kind,
                call_id: call,
                ambulance_id: amb.map(str::to_string),
            });
        }
    }

    /// Kept entries; empty unless the run asked for them.
    pub fn entries(&self) -> &[EventLogEntry] {
        &self.entries
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Hex SHA-256 of the canonical log text.
    pub fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{EVENT_LOG_HEADER}")?;
        for e in &self.entries {
            writeln!(w, "{}", e.to_line())?;
        }
        Ok(())
    }
}

/// A call's full trail plus the resources that served it.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionRecord {
    pub call: EmergencyCall,
    pub ambulance_id: Option<String>,
    pub home_base: Option<String>,
    pub origin: Option<DispatchOrigin>,
    pub ed_id: Option<String>,
    /// `arrive_scene - arrival_minute`, for calls served on site or transported.
    pub response_time_minutes: Option<f64>,
    pub in_warmup: bool,
    /// Still in flight at the horizon.
    pub censored: bool,
}

impl MissionRecord {
    pub fn new(
        call: EmergencyCall,
        ambulance_id: Option<String>,
        home_base: Option<String>,
        origin: Option<DispatchOrigin>,
        ed_id: Option<String>,
        warmup_minutes: f64,
    ) -> Self {
        let censored = !call.status.is_terminal();
        let response_time_minutes = match call.status {
            CallStatus::ClosedOnSite | CallStatus::Transported => {
                call.times.arrive_scene.map(|t| t - call.arrival_minute)
            }
            _ => None,
        };
        MissionRecord {
            in_warmup: call.arrival_minute < warmup_minutes,
            censored,
            response_time_minutes,
            call,
            ambulance_id,
            home_base,
            origin,
            ed_id,
        }
    }

    /// Counted in KPIs: after warm-up and not censored.
    pub fn is_measured(&self) -> bool {
        !self.in_warmup && !self.censored
    }
}

pub const RECORDS_HEADER: [&str; 24] = [
    "call_id",
    "arrival_minute",
    "zone",
    "square",
    "scene",
    "triage_tag",
    "onscene_tag",
    "pathology_group",
    "status",
    "ambulance_id",
    "home_base",
    "dispatch_origin",
    "ed_id",
    "triage_done",
    "assigned",
    "depart",
    "arrive_scene",
    "depart_scene",
    "arrive_ed",
    "offload_start",
    "offload_done",
    "mission_end",
    "response_time_minutes",
    "flags",
];

fn opt_time(t: Option<f64>) -> String {
    t.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Mission records as CSV with every timestamp column.
pub fn write_records_csv<W: Write>(
    inst: &SimulationInstance,
    records: &[MissionRecord],
    w: W,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RECORDS_HEADER)?;
    for r in records {
        let c = &r.call;
        let t = &c.times;
        let mut flags = Vec::new();
        if r.in_warmup {
            flags.push("warmup");
        }
        if r.censored {
            flags.push("censored");
        }
        out.write_record([
            c.call_id.to_string(),
            format!("{:.6}", c.arrival_minute),
            inst.demand.zones[c.zone].id.clone(),
            inst.demand.squares[c.square.0].id.clone(),
            inst.network.point_id(c.scene).to_string(),
            c.triage_tag.as_str().to_string(),
            c.onscene_tag.map(|s| s.as_str().to_string()).unwrap_or_default(),
            inst.demand.groups[c.pathology_group].clone(),
            c.status.as_str().to_string(),
            r.ambulance_id.clone().unwrap_or_default(),
            r.home_base.clone().unwrap_or_default(),
            r.origin.map(|o| o.as_str().to_string()).unwrap_or_default(),
            r.ed_id.clone().unwrap_or_default(),
            opt_time(t.triage_done),
            opt_time(t.assigned),
            opt_time(t.depart),
            opt_time(t.arrive_scene),
            opt_time(t.depart_scene),
            opt_time(t.arrive_ed),
            opt_time(t.offload_start),
            opt_time(t.offload_done),
            opt_time(t.mission_end),
            opt_time(r.response_time_minutes),
            flags.join(";"),
        ])?;
    }
    out.flush()?;
    Ok(())
}
