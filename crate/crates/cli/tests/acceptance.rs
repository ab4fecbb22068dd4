//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use emsim_cli::commands::{compare, simulate, synth_instance, CompareArgs, SimulateArgs, SimulateOutcome, SynthArgs};
use emsim_core::calibration::{l1_objective, weighted_median_ratio, TravelLeg};
use emsim_core::demand::CallStatus;
use emsim_core::engine::{run_replication, DispatchOrigin, EventKind, MissionRecord, RunOptions, ScriptedCall};
use emsim_core::fixtures::{set_phase, set_travel, tiny_instance, TinyLayout};
use emsim_core::kpi::{
    base_shares, coverage, paired_t, scenario_scorecard, summarize, t_quantile, ComparisonCell, PairedResult,
    ReplicationSummary, Verdict, THRESHOLDS,
};
use emsim_core::model::{CoverageClassification, CoverageDenominator};
use emsim_core::stochastic::Phase;
use emsim_core::{synth, SimulationInstance, UrgencyClass};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let config = synth_instance(&SynthArgs {
        profile: "rieti-like".into(),
        seed: 1,
        out: root.join("instance"),
    })
    .expect("synthetic instance");

    let mut runs: Vec<Vec<ReplicationSummary>> = Vec::new();
    let mut results: Vec<(u8, &str, Check)> = Vec::new();
    results.push((1, "calibration exactness", calibration_exactness()));
    results.push((
        2,
        "deterministic replay",
        deterministic_replay(&config, root, &mut runs),
    ));
    results.push((3, "hand-trace oracle", hand_traces()));
    results.push((4, "KPI oracle equivalence", kpi_oracle()));
    let year = full_year(&config, root, None);
    results.push((5, "demand fidelity", demand_fidelity(&year)));
    results.push((6, "structural invariants", invariant_suite(&year)));
    results.push((7, "directional scenarios", directional(&config, root, &year, &mut runs)));
    results.push((8, "statistical procedure", statistical_procedure()));
    if let Ok((o, _)) = &year {
        runs.push(o.summaries.clone());
    }
    results.push((9, "coverage monotonicity", monotone(&runs)));

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// Lowest minimiser over the breakpoints plus a dense grid.
fn grid_minimiser(pairs: &[(f64, f64)]) -> (f64, f64) {
    let ratios: Vec<f64> = pairs.iter().map(|(r, o)| o / r).collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let steps = 4000;
    let mut candidates: Vec<f64> = (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect();
    candidates.extend(&ratios);
    candidates.sort_by(f64::total_cmp);
    let values: Vec<f64> = candidates.iter().map(|&a| l1_objective(pairs, a)).collect();
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let scale: f64 = pairs.iter().map(|p| p.1).sum();
    let k = values.iter().position(|&v| v <= best + 1e-12 * scale).unwrap();
    (candidates[k], best)
}

fn calibration_exactness() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(20);
    let mut worst = (0.0f64, 0.0f64);
    for set in 0..1000 {
        let n = rng.random_range(1..=50);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                // Integer minutes half the time so exact weight ties occur.
                let t_rs: f64 = if rng.random_bool(0.5) {
                    rng.random_range(1..30) as f64
                } else {
                    rng.random_range(0.5..40.0)
                };
                (t_rs, t_rs * rng.random_range(0.6..2.2))
            })
            .collect();
        let alpha = weighted_median_ratio(&pairs).map_err(|e| format!("set {set}: {e}"))?;
        let (grid_alpha, grid_obj) = grid_minimiser(&pairs);
        let d_alpha = (alpha - grid_alpha).abs();
        let d_obj = (l1_objective(&pairs, alpha) - grid_obj).abs();
        ensure!(d_alpha <= 1e-6, "set {set}: alpha {alpha} vs grid {grid_alpha}");
        ensure!(d_obj <= 1e-9 * grid_obj.max(1.0), "set {set}: objective gap {d_obj}");
        worst = (worst.0.max(d_alpha), worst.1.max(d_obj));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "1000 sets, max |d alpha| {:.1e}, max |d objective| {:.1e}, {elapsed:.2?}",
        worst.0, worst.1
    ))
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.push((
                    p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn deterministic_replay(config: &Path, root: &Path, runs: &mut Vec<Vec<ReplicationSummary>>) -> Check {
    let start = Instant::now();
    let mut listings = Vec::new();
    for (name, jobs) in [("replay_a", 1), ("replay_b", 1), ("replay_c", 2), ("replay_d", 4)] {
        let mut args = SimulateArgs::new(config, &root.join(name));
        args.seed = Some(42);
        args.replications = Some(2);
        args.horizon_minutes = Some(30.0 * 1440.0);
        args.warmup_minutes = Some(1440.0);
        args.jobs = jobs;
        let o = simulate(&args).map_err(|e| e.to_string())?;
        runs.push(o.summaries);
        listings.push((name, listing(&root.join(name))));
    }
    let (_, first) = &listings[0];
    ensure!(
        first.iter().any(|(f, _)| f.starts_with("events")),
        "no event logs written"
    );
    for (name, l) in &listings[1..] {
        ensure!(l == first, "{name} differs from replay_a");
    }
    let ma = emsim_cli::manifest::RunManifest::read(&root.join("replay_a")).map_err(|e| e.to_string())?;
    let mb = emsim_cli::manifest::RunManifest::read(&root.join("replay_d")).map_err(|e| e.to_string())?;
    ensure!(
        ma.without_wall_clock() == mb.without_wall_clock(),
        "manifests differ beyond wall clock"
    );
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{} files identical over 4 runs (jobs 1,1,2,4), {elapsed:.2?}",
        first.len()
    ))
}

fn hand_instance(scene_to_scene: Option<f64>) -> SimulationInstance {
    let mut inst = tiny_instance(&TinyLayout::default());
    set_phase(&mut inst, Phase::TelephoneTriage, 1.0);
    set_phase(&mut inst, Phase::AmbulanceAssignment, 1.0);
    set_phase(&mut inst, Phase::AmbulancePreparation, 2.0);
    set_phase(&mut inst, Phase::TreatmentOnSite, 10.0);
    if let Some(m) = scene_to_scene {
        set_travel(&mut inst, "S1", "S1", TravelLeg::SceneToScene, m);
    }
    inst
}

fn scripted(inst: &SimulationInstance, times: &[f64]) -> Result<emsim_core::engine::ReplicationOutput, String> {
    let opts = RunOptions {
        keep_events: true,
        check_invariants: true,
        scripted_calls: times.iter().map(|&time| ScriptedCall { time, zone: 0 }).collect(),
    };
    let out = run_replication(inst, 0, &opts);
    let report = out.invariants.as_ref().unwrap();
    ensure!(report.is_clean(), "violations {:?}", report.violations);
    Ok(out)
}

fn back_at_base(out: &emsim_core::engine::ReplicationOutput) -> Vec<f64> {
    out.events
        .entries()
        .iter()
        .filter(|e| e.kind == EventKind::ArriveBase)
        .map(|e| e.time)
        .collect()
}

fn hand_traces() -> Check {
    let one = scripted(&hand_instance(None), &[0.0])?;
    let r = &one.records[0];
    ensure!(
        r.call.times.arrive_scene == Some(9.0),
        "arrive_scene {:?}",
        r.call.times.arrive_scene
    );
    ensure!(back_at_base(&one) == [24.0], "available at {:?}", back_at_base(&one));

    let queued = scripted(&hand_instance(Some(40.0)), &[0.0, 0.0])?;
    let q = &queued.records[1];
    ensure!(
        q.call.times.assigned == Some(24.0)
            && q.call.times.arrive_scene == Some(31.0)
            && q.origin == Some(DispatchOrigin::Base),
        "queued call {:?} from {:?}",
        q.call.times,
        q.origin
    );

    let direct = scripted(&hand_instance(Some(4.0)), &[0.0, 0.0])?;
    let d = &direct.records[1];
    ensure!(
        d.origin == Some(DispatchOrigin::Field)
            && d.call.times.depart == Some(19.0)
            && d.call.times.arrive_scene == Some(23.0),
        "redispatch {:?} from {:?}",
        d.call.times,
        d.origin
    );
    ensure!(
        back_at_base(&direct) == [38.0],
        "redispatch return {:?}",
        back_at_base(&direct)
    );
    Ok("arrive 9 / free 24; queued 24 -> 31; redispatch 19 -> 23, home 38".into())
}

fn kpi_oracle() -> Check {
    let mut inst = synth::rieti_like(5);
    inst.horizon_minutes = 30.0 * 1440.0;
    inst.warmup_minutes = 2.0 * 1440.0;
    let bases: Vec<String> = inst.scenario.allocations.iter().map(|a| a.base.clone()).collect();
    let mut cells = 0;
    let mut per_rep: Vec<[[f64; 7]; 2]> = Vec::new();
    for rep in 0..5 {
        let recs = run_replication(&inst, rep, &RunOptions::default()).records;
        let measured: Vec<&MissionRecord> = recs
            .iter()
            .filter(|r| !r.in_warmup && !r.censored && r.call.status != CallStatus::CancelledEnRoute)
            .collect();
        let mut grid = [[0.0; 7]; 2];
        for by in [CoverageClassification::Triage, CoverageClassification::OnScene] {
            for den in [CoverageDenominator::Class, CoverageDenominator::AllCalls] {
                for u in UrgencyClass::ALL {
                    let class: Vec<f64> = measured
                        .iter()
                        .filter(|r| {
                            let tag = match by {
                                CoverageClassification::Triage => r.call.triage_tag,
                                CoverageClassification::OnScene => r.call.onscene_tag.unwrap_or(r.call.triage_tag),
                            };
                            tag.urgency() == u
                        })
                        .map(|r| r.response_time_minutes.unwrap())
                        .collect();
                    let n = match den {
                        CoverageDenominator::Class => class.len(),
                        CoverageDenominator::AllCalls => measured.len(),
                    };
                    for (k, &th) in THRESHOLDS.iter().enumerate() {
                        let want = 100.0 * class.iter().filter(|&&rt| rt <= th).count() as f64 / n as f64;
                        let got = coverage(&recs, u, th, by, den).map_err(|e| e.to_string())?;
                        ensure!(got.n_calls == n, "rep {rep} n {} vs {n}", got.n_calls);
                        ensure!(
                            (got.coverage_pct - want).abs() <= 1e-9,
                            "rep {rep} {u}@{th}: {} vs {want}",
                            got.coverage_pct
                        );
                        if by == CoverageClassification::Triage && den == CoverageDenominator::Class {
                            grid[u.index()][k] = want;
                        }
                        cells += 1;
                    }
                }
            }
        }
        let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
        let mut total = 0.0;
        for r in recs.iter().filter(|r| !r.in_warmup && !r.censored) {
            if let Some(b) = &r.home_base {
                *counts.entry(b).or_default() += 1.0;
                total += 1.0;
            }
        }
        for (b, pct) in base_shares(&recs, &bases) {
            let want = 100.0 * counts.get(b.as_str()).copied().unwrap_or(0.0) / total;
            ensure!((pct - want).abs() <= 1e-9, "base share {b}: {pct} vs {want}");
        }
        let s = ReplicationSummary::compute(&inst, rep, &recs);
        for u in 0..2 {
            for k in 0..7 {
                ensure!(
                    (s.coverage[u][k].unwrap() - grid[u][k]).abs() <= 1e-9,
                    "summary cell ({u},{k})"
                );
            }
        }
        per_rep.push(grid);
    }
    ensure!(
        (t_quantile(0.975, 29.0) - 2.0452).abs() <= 5e-5,
        "t quantile {}",
        t_quantile(0.975, 29.0)
    );
    let t4 = t_quantile(0.975, 4.0);
    for k in 0..7 {
        let v: Vec<f64> = per_rep.iter().map(|g| g[0][k]).collect();
        let mean = v.iter().sum::<f64>() / 5.0;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        let s = summarize(&v).map_err(|e| e.to_string())?;
        ensure!((s.avg - mean).abs() <= 1e-9, "SummaryStat mean");
        ensure!(
            (s.lb - (mean - t4 * sd / 5f64.sqrt())).abs() <= 1e-6,
            "SummaryStat bound"
        );
        let w: Vec<f64> = per_rep.iter().map(|g| g[1][k]).collect();
        let d: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - b).collect();
        let dm = d.iter().sum::<f64>() / 5.0;
        let dsd = (d.iter().map(|x| (x - dm).powi(2)).sum::<f64>() / 4.0).sqrt();
        let p = paired_t(&v, &w).map_err(|e| e.to_string())?;
        ensure!(
            (p.lo - (dm - t4 * dsd / 5f64.sqrt())).abs() <= 1e-6,
            "paired_t lower bound"
        );
        ensure!(
            (p.hi - (dm + t4 * dsd / 5f64.sqrt())).abs() <= 1e-6,
            "paired_t upper bound"
        );
    }
    Ok(format!(
        "{cells} coverage cells, base shares, SummaryStat and paired_t match; t(0.975,29) = {:.4}",
        t_quantile(0.975, 29.0)
    ))
}

fn full_year(config: &Path, root: &Path, scenario: Option<&str>) -> Result<(SimulateOutcome, Duration), String> {
    let start = Instant::now();
    let name = scenario.unwrap_or("as-is");
    let mut args = SimulateArgs::new(config, &root.join(format!("year_{name}")));
    args.seed = Some(42);
    args.replications = Some(30);
    args.scenario = scenario.map(str::to_string);
    args.write_logs = false;
    let o = simulate(&args).map_err(|e| e.to_string())?;
    Ok((o, start.elapsed()))
}

fn demand_fidelity(year: &Result<(SimulateOutcome, Duration), String>) -> Check {
    let (o, elapsed) = year.as_ref().map_err(Clone::clone)?;
    ensure!(
        o.manifest.horizon_minutes == Some(547_200.0),
        "horizon {:?}",
        o.manifest.horizon_minutes
    );
    let mut inside = 0;
    let mut worst = 0.0f64;
    for (z, row) in synth::ANNUAL_CALLS.iter().enumerate() {
        for (k, &lambda) in row.iter().enumerate() {
            let mean = o.zone_slot_calls[z][k] as f64 / 30.0;
            let sigma = (lambda as f64 / 30.0).sqrt();
            let gap = (mean - lambda as f64).abs() / sigma;
            worst = worst.max(gap);
            if gap <= 3.0 {
                inside += 1;
            }
        }
    }
    let urgent: usize = o.summaries.iter().map(|s| s.calls[0]).sum();
    let total: usize = o.summaries.iter().map(|s| s.calls[0] + s.calls[1]).sum();
    let share = 100.0 * urgent as f64 / total as f64;
    let target = 100.0 * synth::URGENT_CALLS as f64 / (synth::URGENT_CALLS + synth::NON_URGENT_CALLS) as f64;
    ensure!(inside >= 18, "{inside}/20 cells inside 3 sigma (worst {worst:.2})");
    ensure!((share - target).abs() <= 1.0, "urgent share {share:.2} vs {target:.2}");
    ensure!(*elapsed < Duration::from_secs(600), "took {elapsed:?}");
    Ok(format!(
        "{inside}/20 cells within 3 sigma (worst {worst:.2}), urgent share {share:.2}% vs {target:.2}%, 30 reps in {elapsed:.1?}"
    ))
}

fn invariant_suite(year: &Result<(SimulateOutcome, Duration), String>) -> Check {
    // simulate always checks invariants and fails on any violation.
    let (o, _) = year.as_ref().map_err(Clone::clone)?;
    ensure!(o.events >= 1_000_000, "only {} events", o.events);
    Ok(format!("{} checked events, 0 violations", o.events))
}

fn urgent_20(root: &Path, scenario: &str) -> Result<PairedResult, String> {
    let table =
        fs::read_to_string(root.join(format!("cmp_{scenario}")).join("paired_t.csv")).map_err(|e| e.to_string())?;
    for line in table.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[2] == "urgent" && f[3].parse::<f64>() == Ok(20.0) {
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| e.to_string());
            return Ok(PairedResult {
                mean_diff: num(4)?,
                lo: num(5)?,
                hi: num(6)?,
                n: 30,
                verdict: Verdict::parse(f[7]).ok_or("bad verdict")?,
            });
        }
    }
    Err("no urgent/20 row".into())
}

fn directional(
    config: &Path,
    root: &Path,
    base: &Result<(SimulateOutcome, Duration), String>,
    runs: &mut Vec<Vec<ReplicationSummary>>,
) -> Check {
    base.as_ref().map_err(Clone::clone)?;
    let mut detail = Vec::new();
    for (scenario, want) in [
        ("rieti-plus-one", Verdict::SignificantImprovement),
        ("rieti-minus-one", Verdict::SignificantWorsening),
    ] {
        let (o, _) = full_year(config, root, Some(scenario))?;
        runs.push(o.summaries);
        compare(&CompareArgs {
            baseline: root.join("year_as-is"),
            alternatives: vec![root.join(format!("year_{scenario}"))],
            out: root.join(format!("cmp_{scenario}")),
        })
        .map_err(|e| e.to_string())?;
        let r = urgent_20(root, scenario)?;
        ensure!(
            r.verdict == want,
            "{scenario}: {:?} ({:.2}, {:.2})",
            r.verdict,
            r.lo,
            r.hi
        );
        detail.push(format!("{scenario} {} ({:.2}, {:.2})", r.verdict.as_str(), r.lo, r.hi));
    }
    Ok(detail.join("; "))
}

fn statistical_procedure() -> Check {
    let (lo, hi) = (-8.60, -7.64);
    ensure!(
        Verdict::from_interval(lo, hi) == Verdict::SignificantImprovement,
        "interval verdict"
    );
    // 30 paired differences with mean -8.12 and the half-width 0.48.
    let sd = 0.48 * 30f64.sqrt() / t_quantile(0.975, 29.0);
    let z: Vec<f64> = (0..30).map(|i| (i as f64 - 14.5) / 14.5).collect();
    let zsd = (z.iter().map(|x| x * x).sum::<f64>() / 29.0).sqrt();
    let baseline: Vec<f64> = z.iter().map(|x| 70.0 - 8.12 + sd * x / zsd).collect();
    let alternative = vec![70.0; 30];
    let r = paired_t(&baseline, &alternative).map_err(|e| e.to_string())?;
    ensure!(
        (r.lo - lo).abs() < 1e-9 && (r.hi - hi).abs() < 1e-9,
        "reproduced ({}, {})",
        r.lo,
        r.hi
    );
    ensure!(
        r.verdict == Verdict::SignificantImprovement,
        "paired_t verdict {:?}",
        r.verdict
    );
    let cell = |urgency, threshold, verdict| ComparisonCell {
        urgency,
        threshold,
        result: PairedResult {
            mean_diff: 0.0,
            lo: 0.0,
            hi: 0.0,
            n: 30,
            verdict,
        },
    };
    let mut grid = Vec::new();
    for u in UrgencyClass::ALL {
        for th in THRESHOLDS {
            let v = if u == UrgencyClass::NonUrgent && th == 60.0 {
                Verdict::NotSignificant
            } else {
                Verdict::SignificantImprovement
            };
            grid.push(cell(u, th, v));
        }
    }
    let row = scenario_scorecard("S5", &grid).map_err(|e| e.to_string())?;
    ensure!(
        (row.improvements, row.worsenings) == (13, 0),
        "tally {:?}",
        (row.improvements, row.worsenings)
    );
    ensure!(row.label.starts_with("Dominant"), "label {}", row.label);
    Ok(format!(
        "(-8.60, -7.64) -> {}; tally (13,0) -> {}",
        r.verdict.as_str(),
        row.label
    ))
}

fn monotone(runs: &[Vec<ReplicationSummary>]) -> Check {
    let mut checked = 0;
    for (i, run) in runs.iter().enumerate() {
        for s in run {
            for (u, row) in s.coverage.iter().enumerate() {
                let vals: Vec<f64> = row.iter().flatten().copied().collect();
                ensure!(
                    vals.len() == 7,
                    "run {i} rep {} class {u} has empty cells",
                    s.replication_index
                );
                ensure!(
                    vals.windows(2).all(|w| w[0] <= w[1]),
                    "run {i} rep {} class {u}: {vals:?}",
                    s.replication_index
                );
                checked += 1;
            }
        }
    }
    ensure!(checked > 0, "no runs to check");
    Ok(format!(
        "{} runs, {checked} replication x class rows nondecreasing",
        runs.len()
    ))
}
