//! Calibration observation and factor-table files.

use std::io::{Read, Write};

use emsim_core::calibration::{
    build_table, CalibrationObservation, CalibrationSettings, CalibrationTable, CoverageReport, TravelLeg,
};
use emsim_core::UrgencyClass;

use crate::error::{CliError, Result};

/// Reads `leg,slot,urgency,t_rs,t_obs`.
pub fn read_observations<R: Read>(r: R) -> Result<Vec<CalibrationObservation>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rd
        .headers()
        .map_err(|e| CliError::Schema(format!("observations header: {e}")))?;
    let want = ["leg", "slot", "urgency", "t_rs", "t_obs"];
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(CliError::Schema(format!(
            "observations header must be `{}`",
            want.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 2;
        let bad = |m: String| CliError::Schema(format!("observations row {row}: {m}"));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|_| bad(format!("{}: expected a number, got `{}`", want[k], &rec[k])))
        };
        out.push(CalibrationObservation {
            leg: rec[0].parse::<TravelLeg>().map_err(bad)?,
            slot: rec[1].to_string(),
            urgency: rec[2].parse::<UrgencyClass>().map_err(bad)?,
            t_rs: num(3)?,
            t_obs: num(4)?,
        });
    }
    Ok(out)
}

/// `leg,slot,urgency,alpha,n_obs`, the layout instance configurations load.
pub fn write_table<W: Write>(table: &CalibrationTable, w: W) -> std::result::Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["leg", "slot", "urgency", "alpha", "n_obs"])?;
    for (k, e) in table.entries() {
        out.write_record([
            k.leg.as_str().to_string(),
            k.slot.clone(),
            k.urgency.as_str().to_string(),
            format!("{:.6}", e.alpha),
            e.n_obs.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_coverage<W: Write>(report: &CoverageReport, w: W) -> std::result::Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["leg", "slot", "urgency", "n_raw", "n_kept", "status"])?;
    for (k, s) in &report.groups {
        out.write_record([
            k.leg.as_str().to_string(),
            k.slot.clone(),
            k.urgency.as_str().to_string(),
            s.n_raw.to_string(),
            s.n_kept.to_string(),
            if s.estimated { "estimated" } else { "default" }.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One row per slot with base-to-scene and scene-to-ED factors for both
/// urgency classes; missing factors print as 1.
pub fn write_pivot<W: Write>(table: &CalibrationTable, slots: &[String], w: W) -> std::result::Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "slot",
        "non_urgent_base_to_scene",
        "non_urgent_scene_to_ed",
        "urgent_base_to_scene",
        "urgent_scene_to_ed",
    ])?;
    for slot in slots {
        let mut rec = vec![slot.clone()];
        for u in [UrgencyClass::NonUrgent, UrgencyClass::Urgent] {
            for leg in [TravelLeg::BaseToScene, TravelLeg::SceneToEd] {
                rec.push(format!("{:.3}", table.alpha(leg, slot, u)));
            }
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Builds the table and a coverage report spanning every leg, `slots`
/// entry and urgency class.
pub fn calibrate(
    obs: &[CalibrationObservation],
    slots: &[String],
    settings: &CalibrationSettings,
) -> Result<(CalibrationTable, CoverageReport)> {
    if let Some(o) = obs.iter().find(|o| !slots.contains(&o.slot)) {
        return Err(CliError::Schema(format!(
            "observation slot `{}` is not one of: {}",
            o.slot,
            slots.join(", ")
        )));
    }
    let (table, report) = build_table(obs, settings).map_err(|e| CliError::Schema(e.to_string()))?;
    Ok((table, report.with_universe(slots)))
}
