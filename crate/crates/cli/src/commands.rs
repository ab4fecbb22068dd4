use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use emsim_core::calibration::{CalibrationSettings, RatioBounds};
use emsim_core::demand::DemandSlotScheme;
use emsim_core::engine::{write_records_csv, RunOptions};
use emsim_core::kpi::{
    compare_summaries, read_replication_coverage, scenario_scorecard, sort_scorecard, summarize,
    validate_against_history, write_base_shares, write_call_counts, write_coverage_summary, write_paired_table,
    write_replication_coverage, write_scorecard, GapScale, ReplicationSummary, ScorecardRow, SummaryStat, Target,
    ValidationReport, THRESHOLDS,
};
use emsim_core::model::{five_period_scheme, SlotCalendar};
use emsim_core::replication::run_replications;
use emsim_core::stochastic::ParametricFamily;
use emsim_core::{load_instance, save_instance, synth, SimulationInstance, UrgencyClass};

use crate::calibrate;
use crate::error::{CliError, Result};
use crate::ingest;
use crate::manifest::{combined_digest, digest_file, digest_tree, RunManifest, MANIFEST_FILE};

pub const COVERAGE_BY_REPLICATION: &str = "coverage_by_replication.csv";
pub const CALL_COUNTS: &str = "call_counts.csv";
pub const BASE_SHARES_BY_REPLICATION: &str = "base_shares_by_replication.csv";

/// `EMSIM_SEED`, when set, wins over `--seed`.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>) -> Result<Option<u64>> {
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| CliError::Schema(format!("EMSIM_SEED must be an unsigned integer, got `{s}`"))),
        None => Ok(flag),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(CliError::io(p))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::result::Result<(), csv::Error>,
{
    let mut w = create(path)?;
    f(&mut w).map_err(CliError::csv(path))?;
    w.flush().map_err(CliError::io(path))
}

/// Input digests of an instance directory, skipping `out` when nested.
fn instance_inputs(config: &Path, out: &Path) -> Result<BTreeMap<String, String>> {
    let dir = config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut skip: Vec<PathBuf> = vec![PathBuf::from(MANIFEST_FILE)];
    if let (Ok(d), Ok(o)) = (dir.canonicalize(), out.canonicalize()) {
        if let Ok(rel) = o.strip_prefix(&d) {
            skip.push(rel.to_path_buf());
        }
    }
    let skip_refs: Vec<&Path> = skip.iter().map(PathBuf::as_path).collect();
    Ok(digest_tree(dir, &skip_refs)?
        .into_iter()
        .map(|(k, v)| (format!("instance/{k}"), v))
        .collect())
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: PathBuf,
    pub scenario: Option<String>,
    pub replications: Option<u32>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub horizon_minutes: Option<f64>,
    pub warmup_minutes: Option<f64>,
    /// Write `events/rep_NNN.csv` and `records/rep_NNN.csv`.
    pub write_logs: bool,
}

impl SimulateArgs {
    pub fn new(config: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        SimulateArgs {
            config: config.into(),
            scenario: None,
            replications: None,
            seed: None,
            out: out.into(),
            jobs: 0,
            horizon_minutes: None,
            warmup_minutes: None,
            write_logs: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub manifest: RunManifest,
    pub summaries: Vec<ReplicationSummary>,
    pub events: u64,
    pub event_digests: Vec<String>,
    /// Measured calls per `[zone][demand slot]`, summed over replications.
    pub zone_slot_calls: Vec<Vec<u64>>,
}

struct RepResult {
    summary: ReplicationSummary,
    digest: String,
    events: u64,
    violations: Vec<String>,
    zone_slot: Vec<Vec<u64>>,
    io: Option<CliError>,
}

/// Applies flag overrides to a loaded instance.
pub fn prepare_instance(args: &SimulateArgs) -> Result<SimulationInstance> {
    let mut inst = load_instance(&args.config)?;
    if let Some(name) = &args.scenario {
        inst = inst.with_scenario(name)?;
    }
    if let Some(n) = args.replications {
        inst.replications = n;
    }
    if let Some(s) = args.seed {
        inst.base_seed = s;
    }
    if let Some(h) = args.horizon_minutes {
        inst.horizon_minutes = h;
    }
    if let Some(w) = args.warmup_minutes {
        inst.warmup_minutes = w;
    }
    if inst.replications == 0 {
        return Err(CliError::Schema("replications must be at least 1".into()));
    }
    if !(inst.horizon_minutes > inst.warmup_minutes && inst.warmup_minutes >= 0.0) {
        return Err(CliError::Schema(format!(
            "warm-up ({}) must be non-negative and shorter than the horizon ({})",
            inst.warmup_minutes, inst.horizon_minutes
        )));
    }
    Ok(inst)
}

pub fn simulate(args: &SimulateArgs) -> Result<SimulateOutcome> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("simulate");
    let inst = prepare_instance(args)?;
    let out = &args.out;
    create_dir(out)?;
    let (events_dir, records_dir) = (out.join("events"), out.join("records"));
    if args.write_logs {
        create_dir(&events_dir)?;
        create_dir(&records_dir)?;
    }
    let options = RunOptions {
        keep_events: args.write_logs,
        check_invariants: true,
        scripted_calls: Vec::new(),
    };
    let n_zones = inst.demand.zones.len();
    let n_slots = inst.demand.scheme.len();
    let results = run_replications(&inst, inst.replications, args.jobs, &options, |o| {
        let mut io = None;
        if args.write_logs {
            let ev = events_dir.join(format!("rep_{:03}.csv", o.replication_index));
            let rec = records_dir.join(format!("rep_{:03}.csv", o.replication_index));
            let res = create(&ev).and_then(|mut w| {
                o.events.write_to(&mut w).map_err(CliError::io(&ev))?;
                w.flush().map_err(CliError::io(&ev))
            });
            let res = res.and_then(|_| write_with(&rec, |w| write_records_csv(&inst, &o.records, w)));
            io = res.err();
        }
        let mut zone_slot = vec![vec![0u64; n_slots]; n_zones];
        for r in o.records.iter().filter(|r| !r.in_warmup) {
            zone_slot[r.call.zone][inst.demand.scheme.slot_at(r.call.arrival_minute)] += 1;
        }
        RepResult {
            summary: ReplicationSummary::compute(&inst, o.replication_index, &o.records),
            digest: o.events.digest(),
            events: o.events.len(),
            violations: o.invariants.map(|r| r.violations).unwrap_or_default(),
            zone_slot,
            io,
        }
    })
    .map_err(|e| CliError::Internal(e.to_string()))?;

    let mut summaries = Vec::new();
    let mut digests = Vec::new();
    let mut violations = Vec::new();
    let mut zone_slot_calls = vec![vec![0u64; n_slots]; n_zones];
    let mut events = 0;
    let mut event_counts = Vec::new();
    let mut per_rep_zone_slot = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        if let Some(e) = r.io {
            return Err(e);
        }
        for v in r.violations {
            violations.push(format!("replication {i}: {v}"));
        }
        for (z, row) in r.zone_slot.iter().enumerate() {
            for (k, c) in row.iter().enumerate() {
                zone_slot_calls[z][k] += c;
            }
        }
        per_rep_zone_slot.push(r.zone_slot);
        events += r.events;
        event_counts.push(r.events);
        digests.push(r.digest);
        summaries.push(r.summary);
    }

    write_with(&out.join(COVERAGE_BY_REPLICATION), |w| {
        write_replication_coverage(&summaries, w)
    })?;
    write_with(&out.join("coverage_summary.csv"), |w| {
        write_coverage_summary(&summaries, &BTreeMap::new(), w)
    })?;
    write_with(&out.join("base_shares.csv"), |w| write_base_shares(&summaries, w))?;
    write_with(&out.join(CALL_COUNTS), |w| write_call_counts(&summaries, w))?;
    write_with(&out.join(BASE_SHARES_BY_REPLICATION), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["replication", "base", "share_pct"])?;
        for s in &summaries {
            for (b, v) in &s.base_shares {
                c.write_record([s.replication_index.to_string(), b.clone(), format!("{v:.6}")])?;
            }
        }
        c.flush()?;
        Ok(())
    })?;
    write_with(&out.join("zone_slot_calls.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["replication", "zone", "slot", "calls"])?;
        for (i, table) in per_rep_zone_slot.iter().enumerate() {
            for (z, row) in table.iter().enumerate() {
                for (k, n) in row.iter().enumerate() {
                    c.write_record([
                        i.to_string(),
                        inst.demand.zones[z].id.clone(),
                        inst.demand.scheme.ids()[k].clone(),
                        n.to_string(),
                    ])?;
                }
            }
        }
        c.flush()?;
        Ok(())
    })?;
    write_with(&out.join("event_digests.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["replication", "events", "sha256"])?;
        for (i, (d, n)) in digests.iter().zip(&event_counts).enumerate() {
            c.write_record([i.to_string(), n.to_string(), d.clone()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    if !violations.is_empty() {
        let p = out.join("invariant_violations.txt");
        fs::write(&p, violations.join("\n") + "\n").map_err(CliError::io(&p))?;
    }

    manifest.inputs = instance_inputs(&args.config, out)?;
    manifest.scenario = Some(inst.scenario.name.clone());
    manifest.base_seed = Some(inst.base_seed);
    manifest.replications = Some(inst.replications);
    manifest.horizon_minutes = Some(inst.horizon_minutes);
    manifest.warmup_minutes = Some(inst.warmup_minutes);
    manifest.instance_hash = Some(combined_digest(
        &manifest.inputs,
        &[
            format!("scenario={}", inst.scenario.name),
            format!("horizon_minutes={}", inst.horizon_minutes),
            format!("warmup_minutes={}", inst.warmup_minutes),
        ],
    ));
    manifest.param("write_logs", args.write_logs);
    let manifest = manifest.finish(out, started)?;
    if !violations.is_empty() {
        return Err(CliError::InvariantBreach(format!(
            "{} violation(s); first: {}",
            violations.len(),
            violations[0]
        )));
    }
    Ok(SimulateOutcome {
        manifest,
        summaries,
        events,
        event_digests: digests,
        zone_slot_calls,
    })
}

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub baseline: PathBuf,
    pub alternatives: Vec<PathBuf>,
    pub out: PathBuf,
}

fn results_name(dir: &Path, m: &RunManifest) -> String {
    m.scenario
        .clone()
        .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "results".into())
}

fn read_coverage(dir: &Path) -> Result<Vec<ReplicationSummary>> {
    let p = dir.join(COVERAGE_BY_REPLICATION);
    let f = File::open(&p).map_err(CliError::io(&p))?;
    read_replication_coverage(f).map_err(|e| CliError::Schema(format!("{}: {e}", p.display())))
}

/// Paired-t grid of every alternative against the baseline, plus the
/// scorecard. Results directories must share seed and replication count.
pub fn compare(args: &CompareArgs) -> Result<Vec<ScorecardRow>> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("compare");
    let bm = RunManifest::read(&args.baseline)?;
    let base_name = results_name(&args.baseline, &bm);
    let base = read_coverage(&args.baseline)?;
    manifest.base_seed = bm.base_seed;
    manifest.replications = bm.replications;
    manifest.scenario = Some(base_name.clone());
    let mut paired = Vec::new();
    let mut rows = Vec::new();
    for (i, dir) in args.alternatives.iter().enumerate() {
        let am = RunManifest::read(dir)?;
        if let (Some(b), Some(a)) = (bm.base_seed, am.base_seed) {
            if a != b {
                return Err(CliError::SeedMismatch {
                    baseline: b,
                    alternative: a,
                });
            }
        }
        if let (Some(b), Some(a)) = (bm.replications, am.replications) {
            if a != b {
                return Err(CliError::ReplicationCountMismatch {
                    baseline: b,
                    alternative: a,
                });
            }
        }
        let alt = read_coverage(dir)?;
        if alt.len() != base.len() {
            return Err(CliError::ReplicationCountMismatch {
                baseline: base.len() as u32,
                alternative: alt.len() as u32,
            });
        }
        let name = results_name(dir, &am);
        let cells = compare_summaries(&base, &alt).map_err(|e| CliError::Schema(e.to_string()))?;
        let mut buf = Vec::new();
        write_paired_table(&base_name, &name, &cells, &mut buf).map_err(CliError::csv(&args.out))?;
        let text = String::from_utf8(buf).expect("csv is utf-8");
        paired.push(if i == 0 {
            text
        } else {
            text.split_once('\n')
                .map(|(_, rest)| rest.to_string())
                .unwrap_or_default()
        });
        rows.push(scenario_scorecard(&name, &cells).map_err(|e| CliError::Schema(e.to_string()))?);
        manifest.inputs.insert(
            format!("alternative_{i}/{COVERAGE_BY_REPLICATION}"),
            digest_file(&dir.join(COVERAGE_BY_REPLICATION))?,
        );
    }
    sort_scorecard(&mut rows);
    create_dir(&args.out)?;
    let p = args.out.join("paired_t.csv");
    fs::write(&p, paired.concat()).map_err(CliError::io(&p))?;
    write_with(&args.out.join("scorecard.csv"), |w| write_scorecard(&rows, w))?;
    manifest.inputs.insert(
        format!("baseline/{COVERAGE_BY_REPLICATION}"),
        digest_file(&args.baseline.join(COVERAGE_BY_REPLICATION))?,
    );
    manifest.finish(&args.out, started)?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct ValidateArgs {
    pub results: PathBuf,
    pub targets: PathBuf,
    /// Largest accepted gap: percentage points for coverage and shares,
    /// percent of the target for counts.
    pub tolerance: f64,
    /// Where to write `validation.csv`; defaults to the results directory.
    pub out: Option<PathBuf>,
}

/// Per-replication values of every KPI the results directory supports:
/// `coverage:<urgency>:<threshold>`, `calls:<urgency>`, `calls:total`,
/// `urgent_share` and `base_share:<base>`.
pub fn kpi_series(results: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in read_coverage(results)? {
        for u in UrgencyClass::ALL {
            for (k, th) in THRESHOLDS.iter().enumerate() {
                if let Some(v) = s.coverage[u.index()][k] {
                    series.entry(format!("coverage:{u}:{th}")).or_default().push(v);
                }
            }
        }
    }
    let read = |name: &str| -> Result<Vec<csv::StringRecord>> {
        let p = results.join(name);
        let mut rd = csv::Reader::from_path(&p).map_err(CliError::csv(&p))?;
        rd.records()
            .collect::<std::result::Result<_, _>>()
            .map_err(CliError::csv(&p))
    };
    let num = |r: &csv::StringRecord, k: usize, file: &str| -> Result<f64> {
        r.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Schema(format!("{file}: bad number in column {k}")))
    };
    for r in read(CALL_COUNTS)? {
        let (u, n) = (num(&r, 1, CALL_COUNTS)?, num(&r, 2, CALL_COUNTS)?);
        series.entry("calls:urgent".into()).or_default().push(u);
        series.entry("calls:non_urgent".into()).or_default().push(n);
        series.entry("calls:total".into()).or_default().push(u + n);
        series
            .entry("urgent_share".into())
            .or_default()
            .push(num(&r, 5, CALL_COUNTS)?);
    }
    for r in read(BASE_SHARES_BY_REPLICATION)? {
        let v = num(&r, 2, BASE_SHARES_BY_REPLICATION)?;
        series.entry(format!("base_share:{}", &r[1])).or_default().push(v);
    }
    Ok(series)
}

/// Reads `kpi,target[,scale]`; scale is `absolute` or `relative`, defaulting
/// to relative for call counts and absolute otherwise.
pub fn read_targets(path: &Path) -> Result<BTreeMap<String, Target>> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(CliError::csv(path))?;
    let mut out = BTreeMap::new();
    for (i, rec) in rd.records().enumerate() {
        let bad = |m: String| CliError::Schema(format!("{} row {}: {m}", path.display(), i + 2));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let kpi = rec.get(0).unwrap_or("").to_string();
        let value: f64 = rec
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("target must be a number".into()))?;
        let scale = match rec.get(2).unwrap_or("") {
            "absolute" => GapScale::Absolute,
            "relative" => GapScale::Relative,
            "" if kpi.starts_with("calls:") => GapScale::Relative,
            "" => GapScale::Absolute,
            other => return Err(bad(format!("scale must be absolute or relative, got `{other}`"))),
        };
        out.insert(kpi, Target { value, scale });
    }
    Ok(out)
}

pub fn validate(args: &ValidateArgs) -> Result<ValidationReport> {
    let targets = read_targets(&args.targets)?;
    let series = kpi_series(&args.results)?;
    let mut stats: BTreeMap<String, SummaryStat> = BTreeMap::new();
    for kpi in targets.keys() {
        let values = series.get(kpi).ok_or_else(|| {
            CliError::Schema(format!(
                "unknown KPI `{kpi}`; available: {}",
                series.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })?;
        let s = summarize(values).map_err(|e| CliError::Schema(format!("{kpi}: {e}")))?;
        stats.insert(kpi.clone(), s);
    }
    let report =
        validate_against_history(&stats, &targets, args.tolerance).map_err(|e| CliError::Schema(e.to_string()))?;
    let out = args.out.clone().unwrap_or_else(|| args.results.clone());
    create_dir(&out)?;
    write_with(&out.join("validation.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "kpi", "target", "avg", "lb", "ub", "gap_lb", "gap_ub", "gap", "scale", "pass",
        ])?;
        for r in &report.rows {
            let f = |v: f64| format!("{v:.6}");
            c.write_record([
                r.kpi.clone(),
                f(r.target.value),
                f(r.stat.avg),
                f(r.stat.lb),
                f(r.stat.ub),
                f(r.stat.gap_lb.unwrap_or(0.0)),
                f(r.stat.gap_ub.unwrap_or(0.0)),
                f(r.gap),
                match r.target.scale {
                    GapScale::Absolute => "absolute",
                    GapScale::Relative => "relative",
                }
                .to_string(),
                r.pass.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub profile: String,
    pub seed: u64,
    pub out: PathBuf,
}

pub const PROFILES: [&str; 1] = ["rieti-like"];

pub fn synth_instance(args: &SynthArgs) -> Result<PathBuf> {
    let started = Instant::now();
    let inst = match args.profile.as_str() {
        "rieti-like" => synth::rieti_like(args.seed),
        other => {
            return Err(CliError::Schema(format!(
                "unknown profile `{other}`; known: {}",
                PROFILES.join(", ")
            )))
        }
    };
    create_dir(&args.out)?;
    let config = save_instance(&inst, &args.out)?;
    let mut manifest = RunManifest::new("synth");
    manifest.base_seed = Some(args.seed);
    manifest.param("profile", &args.profile);
    manifest.finish(&args.out, started)?;
    Ok(config)
}

#[derive(Debug, Clone)]
pub struct IngestArgs {
    pub missions: PathBuf,
    pub out: PathBuf,
    /// Instance supplying demand slots, calibration slots and nominal
    /// travel times.
    pub instance: Option<PathBuf>,
    pub family: ParametricFamily,
    pub alpha: f64,
    pub cell_area_km2: f64,
}

pub fn ingest_missions(args: &IngestArgs) -> Result<ingest::IngestResult> {
    let started = Instant::now();
    let f = File::open(&args.missions).map_err(CliError::io(&args.missions))?;
    let rows = ingest::read_missions(f)?;
    let inst = args.instance.as_deref().map(load_instance).transpose()?;
    let demand_slots = match &inst {
        Some(i) => DemandSlotScheme::new(
            i.demand
                .scheme
                .ids()
                .iter()
                .cloned()
                .zip(i.demand.scheme.starts().iter().copied())
                .collect(),
            0,
        ),
        None => DemandSlotScheme::new(
            synth::DEMAND_SLOTS.iter().map(|(id, s)| (id.to_string(), *s)).collect(),
            0,
        ),
    }
    .map_err(|e| CliError::Schema(e.to_string()))?;
    let opts = ingest::IngestOptions {
        demand_slots,
        calendar: inst.as_ref().map(|i| SlotCalendar::new(&i.network.time_slots, 0)),
        network: inst.as_ref().map(|i| &i.network),
        family: args.family,
        alpha: args.alpha,
        cell_area_km2: args.cell_area_km2,
    };
    let res = ingest::ingest(&rows, &opts)?;
    create_dir(&args.out)?;
    ingest::write_outputs(&res, &args.out)?;
    let mut manifest = RunManifest::new("ingest");
    manifest.inputs.insert("missions".into(), digest_file(&args.missions)?);
    if let Some(p) = &args.instance {
        manifest.inputs.extend(instance_inputs(p, &args.out)?);
    }
    manifest.param("alpha", args.alpha);
    manifest.param("cell_area_km2", args.cell_area_km2);
    manifest.param("family", format!("{:?}", args.family).to_lowercase());
    manifest.finish(&args.out, started)?;
    Ok(res)
}

#[derive(Debug, Clone)]
pub struct CalibrateArgs {
    pub observations: PathBuf,
    pub out: PathBuf,
    /// Instance whose time slots define the grid; default the five periods.
    pub instance: Option<PathBuf>,
    pub min_count: usize,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
}

/// Returns the share of (leg, slot, urgency) groups left at the default.
pub fn calibrate_observations(args: &CalibrateArgs) -> Result<f64> {
    let started = Instant::now();
    let f = File::open(&args.observations).map_err(CliError::io(&args.observations))?;
    let obs = calibrate::read_observations(f)?;
    let slots: Vec<String> = match &args.instance {
        Some(p) => load_instance(p)?.network.calendar.slot_ids().to_vec(),
        None => five_period_scheme().into_iter().map(|s| s.id).collect(),
    };
    let settings = CalibrationSettings {
        min_count: args.min_count,
        ratio_bounds: RatioBounds::new(args.ratio_lo, args.ratio_hi).map_err(|e| CliError::Schema(e.to_string()))?,
    };
    let (table, report) = calibrate::calibrate(&obs, &slots, &settings)?;
    create_dir(&args.out)?;
    write_with(&args.out.join("calibration.csv"), |w| calibrate::write_table(&table, w))?;
    write_with(&args.out.join("calibration_coverage.csv"), |w| {
        calibrate::write_coverage(&report, w)
    })?;
    write_with(&args.out.join("calibration_pivot.csv"), |w| {
        calibrate::write_pivot(&table, &slots, w)
    })?;
    let mut manifest = RunManifest::new("calibrate");
    manifest
        .inputs
        .insert("observations".into(), digest_file(&args.observations)?);
    manifest.param("min_count", args.min_count);
    manifest.param("ratio_lo", args.ratio_lo);
    manifest.param("ratio_hi", args.ratio_hi);
    manifest.finish(&args.out, started)?;
    Ok(report.defaulted_pct())
}
