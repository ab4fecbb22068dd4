//! Historical mission records to model inputs: service-time samples and
//! fits, zone x slot call counts, square weights, travel-time calibration
//! observations and offload-delay estimates.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDateTime;
use emsim_core::calibration::{CalibrationObservation, TravelLeg};
use emsim_core::demand::{build_demand_grid, DemandGrid, DemandSlotScheme, HistoricalCall};
use emsim_core::model::{DistSpec, NetworkModel, SlotCalendar};
use emsim_core::stochastic::{fit_or_empirical, FitAuditEntry, ParametricFamily, Phase, MIN_FIT_SAMPLE};
use emsim_core::{PointIdx, PointKind, SeverityTag, UrgencyClass};
use serde::Serialize;

use crate::error::{CliError, Result};

pub const MISSION_COLUMNS: [&str; 18] = [
    "call_id",
    "ts_call_start",
    "ts_triage_end",
    "ts_assigned",
    "ts_depart",
    "ts_arrive_scene",
    "ts_depart_scene",
    "ts_arrive_ed",
    "ts_offload_start",
    "ts_offload_end",
    "ts_mission_end",
    "zone",
    "x",
    "y",
    "triage_tag",
    "onscene_tag",
    "ed_id",
    "outcome",
];

/// Optional column naming the dispatching base; enables base-to-scene
/// calibration observations.
pub const BASE_COLUMN: &str = "base_id";

/// Phases recoverable from mission timestamps. Sanitization happens after
/// the mission closes and has no timestamp of its own.
pub const EXTRACTED_PHASES: [Phase; 6] = [
    Phase::TelephoneTriage,
    Phase::AmbulanceAssignment,
    Phase::AmbulancePreparation,
    Phase::TreatmentOnSite,
    Phase::PatientLoad,
    Phase::PatientDischarge,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Transported,
    TreatedOnSite,
    Cancelled,
}

impl std::str::FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "transported" => Ok(Outcome::Transported),
            "treated_on_site" | "treated" | "closed_on_site" => Ok(Outcome::TreatedOnSite),
            "cancelled" | "canceled" | "cancelled_en_route" => Ok(Outcome::Cancelled),
            other => Err(format!("unknown outcome `{other}`")),
        }
    }
}

/// Timestamps in minutes since Monday 1970-01-05 00:00.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionRow {
    pub call_id: String,
    pub call_start: f64,
    pub triage_end: Option<f64>,
    pub assigned: Option<f64>,
    pub depart: Option<f64>,
    pub arrive_scene: Option<f64>,
    pub depart_scene: Option<f64>,
    pub arrive_ed: Option<f64>,
    pub offload_start: Option<f64>,
    pub offload_end: Option<f64>,
    pub mission_end: Option<f64>,
    pub zone: String,
    pub x: f64,
    pub y: f64,
    pub triage_tag: SeverityTag,
    pub onscene_tag: Option<SeverityTag>,
    pub ed_id: Option<String>,
    pub outcome: Outcome,
    pub base_id: Option<String>,
}

fn reference_monday() -> NaiveDateTime {
    NaiveDateTime::parse_from_str("1970-01-05 00:00:00", "%Y-%m-%d %H:%M:%S").expect("valid date")
}

/// A plain number is taken as minutes already on the weekly clock (0 =
/// Monday 00:00); otherwise an ISO-like local date-time.
pub fn parse_timestamp(s: &str) -> std::result::Result<Option<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    if let Ok(v) = s.parse::<f64>() {
        return if v.is_finite() {
            Ok(Some(v))
        } else {
            Err(format!("non-finite timestamp `{s}`"))
        };
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            let secs = (dt - reference_monday()).num_milliseconds() as f64 / 1000.0;
            return Ok(Some(secs / 60.0));
        }
    }
    Err(format!("unparseable timestamp `{s}`"))
}

fn schema_row(row: usize, reason: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("missions row {row}: {reason}"))
}

/// Reads the mission CSV. Row numbers in errors count the header as row 1.
pub fn read_missions<R: Read>(r: R) -> Result<Vec<MissionRow>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rd
        .headers()
        .map_err(|e| CliError::Schema(format!("missions header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 18];
    let mut missing = Vec::new();
    for (k, name) in MISSION_COLUMNS.iter().enumerate() {
        match col(name) {
            Some(i) => idx[k] = i,
            None => missing.push(*name),
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Schema(format!(
            "missions header lacks column(s): {}",
            missing.join(", ")
        )));
    }
    let base_col = col(BASE_COLUMN);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| schema_row(row, e))?;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("");
        let ts = |k: usize| parse_timestamp(f(k)).map_err(|e| schema_row(row, format!("{}: {e}", MISSION_COLUMNS[k])));
        let num = |k: usize| {
            f(k).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                schema_row(
                    row,
                    format!("{}: expected a number, got `{}`", MISSION_COLUMNS[k], f(k)),
                )
            })
        };
        let opt_str = |s: &str| (!s.is_empty()).then(|| s.to_string());
        let call_start = ts(1)?.ok_or_else(|| schema_row(row, "ts_call_start is required"))?;
        let zone = f(11).to_string();
        if zone.is_empty() {
            return Err(schema_row(row, "zone is required"));
        }
        out.push(MissionRow {
            call_id: f(0).to_string(),
            call_start,
            triage_end: ts(2)?,
            assigned: ts(3)?,
            depart: ts(4)?,
            arrive_scene: ts(5)?,
            depart_scene: ts(6)?,
            arrive_ed: ts(7)?,
            offload_start: ts(8)?,
            offload_end: ts(9)?,
            mission_end: ts(10)?,
            zone,
            x: num(12)?,
            y: num(13)?,
            triage_tag: f(14).parse().map_err(|e| schema_row(row, format!("triage_tag: {e}")))?,
            onscene_tag: match f(15) {
                "" => None,
                s => Some(s.parse().map_err(|e| schema_row(row, format!("onscene_tag: {e}")))?),
            },
            ed_id: opt_str(f(16)),
            outcome: f(17).parse().map_err(|e| schema_row(row, format!("outcome: {e}")))?,
            base_id: base_col.and_then(|c| opt_str(rec.get(c).unwrap_or(""))),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct IngestOptions<'a> {
    pub demand_slots: DemandSlotScheme,
    /// Calendar for calibration slots, anchored at Monday 00:00.
    pub calendar: Option<SlotCalendar>,
    /// Nominal travel times; without it no calibration observations are made.
    pub network: Option<&'a NetworkModel>,
    pub family: ParametricFamily,
    pub alpha: f64,
    pub cell_area_km2: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OffloadEstimate {
    pub arrivals: usize,
    pub delayed: usize,
    pub total_delay: f64,
}

impl OffloadEstimate {
    pub fn probability(&self) -> f64 {
        if self.arrivals == 0 {
            0.0
        } else {
            self.delayed as f64 / self.arrivals as f64
        }
    }

    pub fn mean_delay(&self) -> Option<f64> {
        (self.delayed > 0).then(|| self.total_delay / self.delayed as f64)
    }
}

#[derive(Debug, Clone)]
pub struct FitRecord {
    pub phase: Phase,
    pub urgency: UrgencyClass,
    pub spec: DistSpec,
    pub audit: String,
}

#[derive(Debug, Clone)]
pub struct IngestResult {
    pub samples: BTreeMap<(Phase, UrgencyClass), Vec<f64>>,
    pub fits: Vec<FitRecord>,
    /// Durations dropped as negative, per phase.
    pub dropped: BTreeMap<Phase, usize>,
    pub zones: Vec<String>,
    pub slot_ids: Vec<String>,
    /// Minutes per day in each slot.
    pub slot_lengths: Vec<u32>,
    /// `[zone][slot]` call counts.
    pub counts: Vec<Vec<u64>>,
    /// Calendar days spanned by the call starts.
    pub days: u64,
    pub grid: DemandGrid,
    pub calibration: Vec<CalibrationObservation>,
    pub offload: BTreeMap<String, OffloadEstimate>,
}

fn span(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

/// Index of the demand square nearest `(x, y)`.
fn nearest_square(net: &NetworkModel, x: f64, y: f64) -> Option<PointIdx> {
    net.points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind == PointKind::DemandSquare)
        .min_by(|a, b| {
            let d = |p: &emsim_core::model::GeoPoint| (p.x - x).powi(2) + (p.y - y).powi(2);
            d(a.1).total_cmp(&d(b.1))
        })
        .map(|(i, _)| PointIdx(i))
}

pub fn ingest(rows: &[MissionRow], opts: &IngestOptions) -> Result<IngestResult> {
    if rows.is_empty() {
        return Err(CliError::Schema("missions file has no data rows".into()));
    }
    let mut samples: BTreeMap<(Phase, UrgencyClass), Vec<f64>> = BTreeMap::new();
    let mut dropped: BTreeMap<Phase, usize> = BTreeMap::new();
    let mut calibration = Vec::new();
    let mut offload: BTreeMap<String, OffloadEstimate> = BTreeMap::new();

    for r in rows {
        let u_triage = r.triage_tag.urgency();
        let u_scene = r.onscene_tag.unwrap_or(r.triage_tag).urgency();
        let scene_phase = match r.outcome {
            Outcome::Transported => Some(Phase::PatientLoad),
            Outcome::TreatedOnSite => Some(Phase::TreatmentOnSite),
            Outcome::Cancelled => None,
        };
        let mut durations = vec![
            (Phase::TelephoneTriage, u_triage, span(Some(r.call_start), r.triage_end)),
            (Phase::AmbulanceAssignment, u_triage, span(r.triage_end, r.assigned)),
            (Phase::AmbulancePreparation, u_triage, span(r.assigned, r.depart)),
        ];
        if let Some(p) = scene_phase {
            durations.push((p, u_scene, span(r.arrive_scene, r.depart_scene)));
        }
        if r.outcome == Outcome::Transported {
            durations.push((Phase::PatientDischarge, u_scene, span(r.offload_start, r.offload_end)));
        }
        for (phase, u, d) in durations {
            match d {
                Some(v) if v >= 0.0 => samples.entry((phase, u)).or_default().push(v),
                Some(_) => *dropped.entry(phase).or_default() += 1,
                None => {}
            }
        }

        if r.outcome == Outcome::Transported {
            if let (Some(ed), Some(wait)) = (&r.ed_id, span(r.arrive_ed, r.offload_start)) {
                if wait >= 0.0 {
                    let e = offload.entry(ed.clone()).or_default();
                    e.arrivals += 1;
                    if wait > 0.0 {
                        e.delayed += 1;
                        e.total_delay += wait;
                    }
                }
            }
        }

        if let (Some(net), Some(cal)) = (opts.network, &opts.calendar) {
            let Some(scene) = nearest_square(net, r.x, r.y) else {
                continue;
            };
            let mut push =
                |origin: Option<PointIdx>, dest: Option<PointIdx>, leg, start: Option<f64>, obs: Option<f64>, u| {
                    let (Some(o), Some(d), Some(start), Some(t_obs)) = (origin, dest, start, obs) else {
                        return;
                    };
                    let Some(t_rs) = net.travel.nominal(o, d, leg) else {
                        return;
                    };
                    if t_obs > 0.0 && t_rs > 0.0 {
                        calibration.push(CalibrationObservation {
                            leg,
                            slot: cal.slot_ids()[cal.slot_at(start)].clone(),
                            urgency: u,
                            t_rs,
                            t_obs,
                        });
                    }
                };
            let base = r.base_id.as_deref().and_then(|b| net.point(b));
            push(
                base,
                Some(scene),
                TravelLeg::BaseToScene,
                r.depart,
                span(r.depart, r.arrive_scene),
                u_triage,
            );
            if r.outcome == Outcome::Transported {
                let ed = r.ed_id.as_deref().and_then(|e| net.point(e));
                push(
                    Some(scene),
                    ed,
                    TravelLeg::SceneToEd,
                    r.depart_scene,
                    span(r.depart_scene, r.arrive_ed),
                    u_scene,
                );
            }
        }
    }

    let mut missing = Vec::new();
    for phase in EXTRACTED_PHASES {
        for u in UrgencyClass::ALL {
            if samples.get(&(phase, u)).is_none_or(Vec::is_empty) {
                missing.push(format!("{phase}/{u}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Schema(format!(
            "no usable duration samples for {}; each needs missions with both bounding timestamps \
             present, non-decreasing, and an outcome that includes the phase",
            missing.join(", ")
        )));
    }

    let mut fits = Vec::new();
    for (&(phase, u), sample) in &samples {
        let (spec, audit) = if sample.len() < MIN_FIT_SAMPLE {
            let spec = DistSpec::Empirical {
                values: Some(sample.clone()),
                file: None,
                truncate_at_zero: false,
            };
            (spec, format!("{phase},{u},empirical_small_sample,,"))
        } else {
            let fit = fit_or_empirical(sample, opts.family, opts.alpha)
                .map_err(|e| CliError::Schema(format!("{phase}/{u}: {e}")))?;
            let entry = FitAuditEntry {
                phase: phase.to_string(),
                urgency: u.to_string(),
                verdict: fit.verdict,
                d: fit.d,
                critical: fit.critical,
            };
            (DistSpec::from_dist(&fit.distribution), entry.to_string())
        };
        fits.push(FitRecord {
            phase,
            urgency: u,
            spec,
            audit,
        });
    }

    let mut zones: Vec<String> = rows.iter().map(|r| r.zone.clone()).collect();
    zones.sort();
    zones.dedup();
    let scheme = &opts.demand_slots;
    let mut counts = vec![vec![0u64; scheme.len()]; zones.len()];
    for r in rows {
        let z = zones.binary_search(&r.zone).expect("collected");
        counts[z][scheme.slot_at(r.call_start)] += 1;
    }
    let day = |t: f64| (t / 1440.0).floor() as i64;
    let first = rows.iter().map(|r| day(r.call_start)).min().expect("nonempty");
    let last = rows.iter().map(|r| day(r.call_start)).max().expect("nonempty");

    let hist: Vec<HistoricalCall> = rows
        .iter()
        .map(|r| HistoricalCall {
            x: r.x,
            y: r.y,
            zone: Some(r.zone.clone()),
        })
        .collect();
    let grid = build_demand_grid(&hist, opts.cell_area_km2, None)
        .map_err(|e| CliError::Schema(format!("demand grid: {e}")))?;

    Ok(IngestResult {
        samples,
        fits,
        dropped,
        zones,
        slot_ids: scheme.ids().to_vec(),
        slot_lengths: (0..scheme.len()).map(|k| scheme.slot_length(k)).collect(),
        counts,
        days: (last - first + 1) as u64,
        grid,
        calibration,
        offload,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(path))?;
    for r in rows {
        w.serialize(r).map_err(CliError::csv(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

/// Writes a one-column `value` file, as read by empirical distributions.
pub fn write_values(path: &Path, values: &[f64]) -> Result<()> {
    #[derive(Serialize)]
    struct V {
        value: f64,
    }
    write_rows(path, values.iter().map(|&value| V { value }))
}

pub fn write_observations(path: &Path, obs: &[CalibrationObservation]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        leg: &'a str,
        slot: &'a str,
        urgency: &'a str,
        t_rs: f64,
        t_obs: f64,
    }
    write_rows(
        path,
        obs.iter().map(|o| Row {
            leg: o.leg.as_str(),
            slot: &o.slot,
            urgency: o.urgency.as_str(),
            t_rs: o.t_rs,
            t_obs: o.t_obs,
        }),
    )
}

/// Writes everything under `out`:
/// `samples/<phase>_<urgency>.csv`, `service_times.toml`, `fit_audit.csv`,
/// `zone_slot_counts.csv`, `zone_rates.csv`, `squares.csv`,
/// `calibration_observations.csv` and `offload.csv`.
pub fn write_outputs(res: &IngestResult, out: &Path) -> Result<()> {
    let samples_dir = out.join("samples");
    fs::create_dir_all(&samples_dir).map_err(CliError::io(&samples_dir))?;
    for ((phase, u), values) in &res.samples {
        write_values(&samples_dir.join(format!("{phase}_{u}.csv")), values)?;
    }

    let mut tables: BTreeMap<&str, BTreeMap<String, DistSpec>> = BTreeMap::new();
    for f in &res.fits {
        let spec = match &f.spec {
            DistSpec::Empirical { truncate_at_zero, .. } => DistSpec::Empirical {
                values: None,
                file: Some(format!("samples/{}_{}.csv", f.phase, f.urgency)),
                truncate_at_zero: *truncate_at_zero,
            },
            other => other.clone(),
        };
        tables
            .entry(f.urgency.as_str())
            .or_default()
            .insert(f.phase.to_string(), spec);
    }
    let path = out.join("service_times.toml");
    let text = toml::to_string(&tables).map_err(|e| CliError::Schema(e.to_string()))?;
    fs::write(&path, text).map_err(CliError::io(&path))?;

    let path = out.join("fit_audit.csv");
    let mut audit = String::from("phase,urgency,decision,D,critical\n");
    for f in &res.fits {
        audit.push_str(&f.audit);
        audit.push('\n');
    }
    fs::write(&path, audit).map_err(CliError::io(&path))?;

    let path = out.join("zone_slot_counts.csv");
    let mut w = csv::Writer::from_path(&path).map_err(CliError::csv(&path))?;
    let mut header = vec!["zone".to_string()];
    header.extend(res.slot_ids.iter().cloned());
    header.push("total".into());
    w.write_record(&header).map_err(CliError::csv(&path))?;
    for (z, row) in res.zones.iter().zip(&res.counts) {
        let mut rec = vec![z.clone()];
        rec.extend(row.iter().map(u64::to_string));
        rec.push(row.iter().sum::<u64>().to_string());
        w.write_record(&rec).map_err(CliError::csv(&path))?;
    }
    w.flush().map_err(CliError::io(&path))?;

    #[derive(Serialize)]
    struct Rate<'a> {
        zone: &'a str,
        slot: &'a str,
        calls: u64,
        days: u64,
        mean_interarrival_minutes: Option<f64>,
    }
    write_rows(
        &out.join("zone_rates.csv"),
        res.zones.iter().enumerate().flat_map(|(z, zone)| {
            res.slot_ids.iter().enumerate().map(move |(k, slot)| {
                let calls = res.counts[z][k];
                Rate {
                    zone,
                    slot,
                    calls,
                    days: res.days,
                    mean_interarrival_minutes: (calls > 0)
                        .then(|| res.days as f64 * res.slot_lengths[k] as f64 / calls as f64),
                }
            })
        }),
    )?;

    #[derive(Serialize)]
    struct Square<'a> {
        square_id: &'a str,
        zone: &'a str,
        x: f64,
        y: f64,
        weight: u64,
    }
    write_rows(
        &out.join("squares.csv"),
        res.grid.cells.iter().map(|c| Square {
            square_id: &c.square_id,
            zone: c.zone.as_deref().unwrap_or(""),
            x: c.rep_x,
            y: c.rep_y,
            weight: c.weight,
        }),
    )?;

    write_observations(&out.join("calibration_observations.csv"), &res.calibration)?;

    #[derive(Serialize)]
    struct Offload<'a> {
        ed_id: &'a str,
        arrivals: usize,
        delayed: usize,
        aod_probability: f64,
        mean_delay_minutes: Option<f64>,
    }
    write_rows(
        &out.join("offload.csv"),
        res.offload.iter().map(|(ed, e)| Offload {
            ed_id: ed,
            arrivals: e.arrivals,
            delayed: e.delayed,
            aod_probability: e.probability(),
            mean_delay_minutes: e.mean_delay(),
        }),
    )
}
