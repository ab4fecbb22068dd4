//! Coverage and base-share KPIs, replication summaries with t-intervals,
//! validation gaps against historical targets, and paired-t scenario
//! comparisons.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};

use crate::demand::CallStatus;
use crate::engine::MissionRecord;
use crate::model::{CoverageClassification, CoverageDenominator, SimulationInstance, UrgencyClass};

/// Response-time thresholds (minutes) used in every coverage table.
pub const THRESHOLDS: [f64; 7] = [10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 60.0];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KpiError {
    #[error("no measured {0} calls")]
    NoCalls(UrgencyClass),
    #[error("need at least 2 replications, got {0}")]
    TooFewReplications(usize),
    #[error("no historical target for KPI `{0}`")]
    MissingTarget(String),
    #[error("paired samples differ in length ({baseline} vs {alternative})")]
    LengthMismatch { baseline: usize, alternative: usize },
    #[error("scenario `{scenario}` lacks {missing} of the {expected} comparison cells")]
    IncompleteGrid {
        scenario: String,
        missing: usize,
        expected: usize,
    },
    #[error("malformed KPI table: {0}")]
    BadTable(String),
}

/// Urgency class a record counts under.
pub fn classify(record: &MissionRecord, by: CoverageClassification) -> UrgencyClass {
    match by {
        CoverageClassification::Triage => record.call.triage_tag.urgency(),
        CoverageClassification::OnScene => record.call.current_tag().urgency(),
    }
}

/// Response times of the coverage population: measured (post warm-up,
/// not censored), not cancelled, of the given class.
pub fn coverage_population(records: &[MissionRecord], urgency: UrgencyClass, by: CoverageClassification) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.is_measured() && r.call.status != CallStatus::CancelledEnRoute)
        .filter(|r| classify(r, by) == urgency)
        .filter_map(|r| r.response_time_minutes)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageResult {
    pub urgency: UrgencyClass,
    pub threshold_minutes: f64,
    pub coverage_pct: f64,
    pub n_calls: usize,
}

pub fn coverage(
    records: &[MissionRecord],
    urgency: UrgencyClass,
    threshold: f64,
    by: CoverageClassification,
    denominator: CoverageDenominator,
) -> Result<CoverageResult, KpiError> {
    let rts = coverage_population(records, urgency, by);
    let n = denominator_size(records, rts.len(), denominator);
    coverage_scaled(&rts, n, urgency, threshold)
}

fn denominator_size(records: &[MissionRecord], class_size: usize, denominator: CoverageDenominator) -> usize {
    match denominator {
        CoverageDenominator::Class => class_size,
        CoverageDenominator::AllCalls => records
            .iter()
            .filter(|r| r.is_measured() && r.call.status != CallStatus::CancelledEnRoute)
            .count(),
    }
}

/// Share of `rts` within `threshold`, over a denominator of `n` calls.
fn coverage_scaled(rts: &[f64], n: usize, urgency: UrgencyClass, threshold: f64) -> Result<CoverageResult, KpiError> {
    if n == 0 {
        return Err(KpiError::NoCalls(urgency));
    }
    let hit = rts.iter().filter(|&&t| t <= threshold).count();
    Ok(CoverageResult {
        urgency,
        threshold_minutes: threshold,
        coverage_pct: 100.0 * hit as f64 / n as f64,
        n_calls: n,
    })
}

/// Coverage of an explicit response-time sample.
pub fn coverage_of(rts: &[f64], urgency: UrgencyClass, threshold: f64) -> Result<CoverageResult, KpiError> {
    coverage_scaled(rts, rts.len(), urgency, threshold)
}

/// Percentage of measured calls served by each base's ambulances, counting
/// direct redispatches toward the serving unit's home base. Bases are
/// reported in the given order; every share is 0 when no call was served.
pub fn base_shares(records: &[MissionRecord], bases: &[String]) -> Vec<(String, f64)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total = 0usize;
    for r in records.iter().filter(|r| r.is_measured()) {
        if let Some(b) = &r.home_base {
            *counts.entry(b.as_str()).or_default() += 1;
            total += 1;
        }
    }
    bases
        .iter()
        .map(|b| {
            let c = counts.get(b.as_str()).copied().unwrap_or(0);
            let pct = if total == 0 {
                0.0
            } else {
                100.0 * c as f64 / total as f64
            };
            (b.clone(), pct)
        })
        .collect()
}

/// KPIs of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSummary {
    pub replication_index: u32,
    /// `[urgency][threshold]`, `None` when the class had no measured calls.
    pub coverage: [[Option<f64>; 7]; 2],
    pub base_shares: Vec<(String, f64)>,
    /// Measured calls per class, cancelled ones included.
    pub calls: [usize; 2],
    /// Coverage denominator per class.
    pub covered_population: [usize; 2],
    pub cancelled: usize,
    pub censored: usize,
    pub mean_response_time: [Option<f64>; 2],
}

impl ReplicationSummary {
    pub fn compute(inst: &SimulationInstance, replication_index: u32, records: &[MissionRecord]) -> Self {
        let by = inst.classify_by;
        let mut coverage = [[None; 7]; 2];
        let mut covered_population = [0; 2];
        let mut mean_response_time = [None; 2];
        for u in UrgencyClass::ALL {
            let rts = coverage_population(records, u, by);
            let n = denominator_size(records, rts.len(), inst.coverage_denominator);
            covered_population[u.index()] = n;
            if !rts.is_empty() {
                mean_response_time[u.index()] = Some(rts.iter().sum::<f64>() / rts.len() as f64);
            }
            for (k, &th) in THRESHOLDS.iter().enumerate() {
                coverage[u.index()][k] = coverage_scaled(&rts, n, u, th).ok().map(|c| c.coverage_pct);
            }
        }
        let mut calls = [0; 2];
        let mut cancelled = 0;
        for r in records.iter().filter(|r| r.is_measured()) {
            calls[classify(r, by).index()] += 1;
            if r.call.status == CallStatus::CancelledEnRoute {
                cancelled += 1;
            }
        }
        let bases: Vec<String> = inst
            .scenarios
            .iter()
            .flat_map(|s| s.allocations.iter().map(|a| a.base.clone()))
            .chain(inst.scenario.allocations.iter().map(|a| a.base.clone()))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        ReplicationSummary {
            replication_index,
            coverage,
            base_shares: base_shares(records, &bases),
            calls,
            covered_population,
            cancelled,
            censored: records.iter().filter(|r| r.censored).count(),
            mean_response_time,
        }
    }
}

/// Quantile of Student's t with `df` degrees of freedom.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0 && df > 0.0);
    let t = StudentsT::new(0.0, 1.0, df).expect("valid t parameters");
    if p == 0.5 {
        return 0.0;
    }
    // Newton from the bisection-based estimate; converges in a few steps.
    let mut x = t.inverse_cdf(p);
    for _ in 0..50 {
        let step = (t.cdf(x) - p) / t.pdf(x);
        x -= step;
        if step.abs() < 1e-14 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Average with a 95% t confidence interval, plus optional target gaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStat {
    pub avg: f64,
    pub lb: f64,
    pub ub: f64,
    pub n: usize,
    pub target: Option<f64>,
    pub gap_lb: Option<f64>,
    pub gap_ub: Option<f64>,
}

impl SummaryStat {
    pub fn half_width(&self) -> f64 {
        (self.ub - self.lb) / 2.0
    }

    pub fn with_target(mut self, mu: f64) -> Self {
        self.target = Some(mu);
        self.gap_lb = Some((self.lb - mu).abs());
        self.gap_ub = Some((self.ub - mu).abs());
        self
    }
}

pub fn summarize(values: &[f64]) -> Result<SummaryStat, KpiError> {
    let n = values.len();
    if n < 2 {
        return Err(KpiError::TooFewReplications(n));
    }
    let nf = n as f64;
    let avg = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (nf - 1.0);
    let hw = t_quantile(0.975, nf - 1.0) * var.sqrt() / nf.sqrt();
    Ok(SummaryStat {
        avg,
        lb: avg - hw,
        ub: avg + hw,
        n,
        target: None,
        gap_lb: None,
        gap_ub: None,
    })
}

/// How a target gap is compared with the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapScale {
    /// Gap in the KPI's own units (percentage points for coverage).
    Absolute,
    /// Gap as a percentage of the target (call counts).
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub value: f64,
    pub scale: GapScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub kpi: String,
    pub stat: SummaryStat,
    pub target: Target,
    /// Largest gap, in tolerance units.
    pub gap: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub tolerance_pct: f64,
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Gaps `|LB - mu|` and `|UB - mu|` per KPI; a KPI passes when both are
/// within `tolerance_pct`.
pub fn validate_against_history(
    stats: &BTreeMap<String, SummaryStat>,
    targets: &BTreeMap<String, Target>,
    tolerance_pct: f64,
) -> Result<ValidationReport, KpiError> {
    let mut rows = Vec::new();
    for (kpi, stat) in stats {
        let target = *targets.get(kpi).ok_or_else(|| KpiError::MissingTarget(kpi.clone()))?;
        let stat = stat.with_target(target.value);
        let raw = stat.gap_lb.unwrap().max(stat.gap_ub.unwrap());
        let gap = match target.scale {
            GapScale::Absolute => raw,
            GapScale::Relative => 100.0 * raw / target.value.abs(),
        };
        rows.push(ValidationRow {
            kpi: kpi.clone(),
            stat,
            target,
            gap,
            pass: gap <= tolerance_pct,
        });
    }
    Ok(ValidationReport { tolerance_pct, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    SignificantImprovement,
    SignificantWorsening,
    NotSignificant,
}

impl Verdict {
    /// Differences are `baseline - alternative`, so an interval entirely
    /// below zero is an improvement.
    pub fn from_interval(lo: f64, hi: f64) -> Self {
        if hi < 0.0 {
            Verdict::SignificantImprovement
        } else if lo > 0.0 {
            Verdict::SignificantWorsening
        } else {
            Verdict::NotSignificant
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::SignificantImprovement => "significant_improvement",
            Verdict::SignificantWorsening => "significant_worsening",
            Verdict::NotSignificant => "not_significant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "significant_improvement" => Some(Verdict::SignificantImprovement),
            "significant_worsening" => Some(Verdict::SignificantWorsening),
            "not_significant" => Some(Verdict::NotSignificant),
            _ => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedResult {
    pub mean_diff: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub verdict: Verdict,
}

/// Paired t interval on `baseline[i] - alternative[i]`.
pub fn paired_t(baseline: &[f64], alternative: &[f64]) -> Result<PairedResult, KpiError> {
    if baseline.len() != alternative.len() {
        return Err(KpiError::LengthMismatch {
            baseline: baseline.len(),
            alternative: alternative.len(),
        });
    }
    let d: Vec<f64> = baseline.iter().zip(alternative).map(|(b, a)| b - a).collect();
    let s = summarize(&d)?;
    Ok(PairedResult {
        mean_diff: s.avg,
        lo: s.lb,
        hi: s.ub,
        n: s.n,
        verdict: Verdict::from_interval(s.lb, s.ub),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonCell {
    pub urgency: UrgencyClass,
    pub threshold: f64,
    pub result: PairedResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorecardRow {
    pub scenario: String,
    pub improvements: usize,
    pub worsenings: usize,
    pub label: &'static str,
}

pub fn scorecard_label(improvements: usize, worsenings: usize) -> &'static str {
    match (improvements, worsenings) {
        (i, 0) if i >= 13 => "Dominant (robust-wide improvement)",
        (i, 0) if i >= 10 => "Strong improvement",
        (i, w) if i > 0 && w > 0 => "Mixed (trade-offs)",
        (i, 0) if i >= 3 => "Selective improvement",
        (_, 0) => "Essentially neutral",
        (_, w) if w >= 10 => "Systematically worsening",
        _ => "Mild negative",
    }
}

/// Tallies one scenario's verdicts over the full urgency x threshold grid.
pub fn scenario_scorecard(scenario: &str, cells: &[ComparisonCell]) -> Result<ScorecardRow, KpiError> {
    let expected = UrgencyClass::ALL.len() * THRESHOLDS.len();
    let mut seen = BTreeMap::new();
    for c in cells {
        if let Some(k) = THRESHOLDS.iter().position(|&t| t == c.threshold) {
            seen.insert((c.urgency.index(), k), c.result.verdict);
        }
    }
    if seen.len() != expected {
        return Err(KpiError::IncompleteGrid {
            scenario: scenario.to_string(),
            missing: expected - seen.len(),
            expected,
        });
    }
    let improvements = seen.values().filter(|v| **v == Verdict::SignificantImprovement).count();
    let worsenings = seen.values().filter(|v| **v == Verdict::SignificantWorsening).count();
    Ok(ScorecardRow {
        scenario: scenario.to_string(),
        improvements,
        worsenings,
        label: scorecard_label(improvements, worsenings),
    })
}

/// Most improvements first, then fewest worsenings, then name.
pub fn sort_scorecard(rows: &mut [ScorecardRow]) {
    rows.sort_by(|a, b| {
        b.improvements
            .cmp(&a.improvements)
            .then(a.worsenings.cmp(&b.worsenings))
            .then_with(|| a.scenario.cmp(&b.scenario))
    });
}

/// Per-replication coverage for every (urgency, threshold) cell.
pub fn coverage_matrix(summaries: &[ReplicationSummary]) -> BTreeMap<(usize, usize), Vec<f64>> {
    let mut out: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for s in summaries {
        for u in 0..2 {
            for k in 0..THRESHOLDS.len() {
                if let Some(v) = s.coverage[u][k] {
                    out.entry((u, k)).or_default().push(v);
                }
            }
        }
    }
    out
}

/// Paired comparison of two scenarios' per-replication summaries, matched
/// by replication index. Cells where either side lacks data are skipped.
pub fn compare_summaries(
    baseline: &[ReplicationSummary],
    alternative: &[ReplicationSummary],
) -> Result<Vec<ComparisonCell>, KpiError> {
    if baseline.len() != alternative.len() {
        return Err(KpiError::LengthMismatch {
            baseline: baseline.len(),
            alternative: alternative.len(),
        });
    }
    let mut cells = Vec::new();
    for u in UrgencyClass::ALL {
        for (k, &th) in THRESHOLDS.iter().enumerate() {
            let pairs: Vec<(f64, f64)> = baseline
                .iter()
                .zip(alternative)
                .filter_map(|(b, a)| Some((b.coverage[u.index()][k]?, a.coverage[u.index()][k]?)))
                .collect();
            if pairs.len() < 2 {
                continue;
            }
            let (b, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            cells.push(ComparisonCell {
                urgency: u,
                threshold: th,
                result: paired_t(&b, &a)?,
            });
        }
    }
    Ok(cells)
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn opt6(v: Option<f64>) -> String {
    v.map(f6).unwrap_or_default()
}

/// Long-format per-replication coverage table; re-read by
/// [`read_replication_coverage`].
pub fn write_replication_coverage<W: Write>(summaries: &[ReplicationSummary], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["replication", "urgency", "threshold_minutes", "coverage_pct", "n_calls"])?;
    for s in summaries {
        for u in UrgencyClass::ALL {
            for (k, th) in THRESHOLDS.iter().enumerate() {
                out.write_record([
                    s.replication_index.to_string(),
                    u.as_str().to_string(),
                    format!("{th}"),
                    opt6(s.coverage[u.index()][k]),
                    s.covered_population[u.index()].to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Coverage cells only; other summary fields are left empty.
pub fn read_replication_coverage<R: Read>(r: R) -> Result<Vec<ReplicationSummary>, KpiError> {
    let bad = |m: String| KpiError::BadTable(m);
    let mut rd = csv::Reader::from_reader(r);
    let mut by_rep: BTreeMap<u32, ReplicationSummary> = BTreeMap::new();
    for (i, row) in rd.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let field = |j: usize| row.get(j).unwrap_or("");
        let rep: u32 = field(0)
            .parse()
            .map_err(|_| bad(format!("row {}: replication", i + 2)))?;
        let u: UrgencyClass = field(1)
            .parse()
            .map_err(|e: String| bad(format!("row {}: {e}", i + 2)))?;
        let th: f64 = field(2).parse().map_err(|_| bad(format!("row {}: threshold", i + 2)))?;
        let k = THRESHOLDS
            .iter()
            .position(|&t| t == th)
            .ok_or_else(|| bad(format!("row {}: threshold {th} not in grid", i + 2)))?;
        let cov = match field(3) {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad(format!("row {}: coverage", i + 2)))?),
        };
        let n: usize = field(4).parse().map_err(|_| bad(format!("row {}: n_calls", i + 2)))?;
        let s = by_rep.entry(rep).or_insert_with(|| ReplicationSummary {
            replication_index: rep,
            coverage: [[None; 7]; 2],
            base_shares: Vec::new(),
            calls: [0; 2],
            covered_population: [0; 2],
            cancelled: 0,
            censored: 0,
            mean_response_time: [None; 2],
        });
        s.coverage[u.index()][k] = cov;
        s.covered_population[u.index()] = n;
    }
    Ok(by_rep.into_values().collect())
}

/// Coverage table: one row per (urgency, threshold) with AVG, LB, UB and,
/// when targets are given, the historical value and both gaps.
pub fn write_coverage_summary<W: Write>(
    summaries: &[ReplicationSummary],
    targets: &BTreeMap<(usize, usize), f64>,
    w: W,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "urgency",
        "threshold_minutes",
        "n_replications",
        "mu",
        "avg",
        "lb",
        "ub",
        "gap_lb",
        "gap_ub",
    ])?;
    let matrix = coverage_matrix(summaries);
    for u in UrgencyClass::ALL {
        for (k, th) in THRESHOLDS.iter().enumerate() {
            let vals = matrix.get(&(u.index(), k)).cloned().unwrap_or_default();
            let stat = summarize(&vals).ok().map(|s| match targets.get(&(u.index(), k)) {
                Some(&mu) => s.with_target(mu),
                None => s,
            });
            out.write_record([
                u.as_str().to_string(),
                format!("{th}"),
                vals.len().to_string(),
                opt6(targets.get(&(u.index(), k)).copied()),
                opt6(stat.map(|s| s.avg)),
                opt6(stat.map(|s| s.lb)),
                opt6(stat.map(|s| s.ub)),
                opt6(stat.and_then(|s| s.gap_lb)),
                opt6(stat.and_then(|s| s.gap_ub)),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Base-share table: per base, AVG and CI of the share across replications.
pub fn write_base_shares<W: Write>(summaries: &[ReplicationSummary], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["base", "avg_pct", "lb_pct", "ub_pct"])?;
    let mut per_base: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for s in summaries {
        for (b, v) in &s.base_shares {
            if !per_base.contains_key(b.as_str()) {
                order.push(b);
            }
            per_base.entry(b).or_default().push(*v);
        }
    }
    for b in order {
        let vals = &per_base[b];
        let s = summarize(vals).ok();
        let avg = vals.iter().sum::<f64>() / vals.len() as f64;
        out.write_record([b.to_string(), f6(avg), opt6(s.map(|s| s.lb)), opt6(s.map(|s| s.ub))])?;
    }
    out.flush()?;
    Ok(())
}

/// Call-count table: measured calls per class, with the urgent share.
pub fn write_call_counts<W: Write>(summaries: &[ReplicationSummary], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "replication",
        "urgent",
        "non_urgent",
        "cancelled",
        "censored",
        "urgent_share_pct",
    ])?;
    for s in summaries {
        let total = s.calls[0] + s.calls[1];
        let share = if total == 0 {
            0.0
        } else {
            100.0 * s.calls[0] as f64 / total as f64
        };
        out.write_record([
            s.replication_index.to_string(),
            s.calls[0].to_string(),
            s.calls[1].to_string(),
            s.cancelled.to_string(),
            s.censored.to_string(),
            f6(share),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_paired_table<W: Write>(
    baseline: &str,
    alternative: &str,
    cells: &[ComparisonCell],
    w: W,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "baseline",
        "scenario",
        "urgency",
        "threshold_minutes",
        "mean_diff",
        "ci_lo",
        "ci_hi",
        "verdict",
    ])?;
    for c in cells {
        out.write_record([
            baseline.to_string(),
            alternative.to_string(),
            c.urgency.as_str().to_string(),
            format!("{}", c.threshold),
            f6(c.result.mean_diff),
            f6(c.result.lo),
            f6(c.result.hi),
            c.result.verdict.as_str().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_scorecard<W: Write>(rows: &[ScorecardRow], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scenario", "improvements", "worsenings", "interpretation"])?;
    for r in rows {
        out.write_record([
            r.scenario.clone(),
            r.improvements.to_string(),
            r.worsenings.to_string(),
            r.label.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
