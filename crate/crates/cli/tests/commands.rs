use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use emsim_cli::commands::{
    self, calibrate_observations, compare, ingest_missions, resolve_seed, simulate, synth_instance, validate,
    CalibrateArgs, CompareArgs, IngestArgs, SimulateArgs, SynthArgs, ValidateArgs,
};
use emsim_cli::ingest::{parse_timestamp, read_missions};
use emsim_cli::manifest::RunManifest;
use emsim_cli::CliError;
use emsim_core::fixtures::{tiny_instance, TinyLayout};
use emsim_core::kpi::{read_replication_coverage, THRESHOLDS};
use emsim_core::stochastic::{DistributionRef, ParametricFamily, Phase};
use emsim_core::{load_instance, save_instance, UrgencyClass};

const HEADER: &str = "call_id,ts_call_start,ts_triage_end,ts_assigned,ts_depart,ts_arrive_scene,\
ts_depart_scene,ts_arrive_ed,ts_offload_start,ts_offload_end,ts_mission_end,zone,x,y,triage_tag,\
onscene_tag,ed_id,outcome,base_id";

/// Constant phases: triage 2, assign 1, prep 3, travel 6, treat 12 or load
/// 9, scene to ED 20, offload wait 5 on every other transport, discharge 4.
fn mission_csv(n: usize) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for i in 0..n {
        let t0 = (i * 97) as f64;
        let tag = ["red", "yellow", "green", "white"][i % 4];
        let transported = i % 3 != 0;
        let zone = if i % 5 == 0 { "north" } else { "south" };
        let (tr, asg, dep, arr) = (t0 + 2.0, t0 + 3.0, t0 + 6.0, t0 + 12.0);
        if transported {
            let (ds, ae) = (arr + 9.0, arr + 29.0);
            let os = ae + if i % 2 == 0 { 5.0 } else { 0.0 };
            let oe = os + 4.0;
            writeln!(
                s,
                "c{i},{t0},{tr},{asg},{dep},{arr},{ds},{ae},{os},{oe},{},{zone},{},{},{tag},{tag},E1,transported,B1",
                oe + 10.0,
                1000.0 + (i % 7) as f64 * 10.0,
                (i % 3) as f64 * 10.0
            )
            .unwrap();
        } else {
            writeln!(
                s,
                "c{i},{t0},{tr},{asg},{dep},{arr},{},,,,{},{zone},{},{},{tag},{tag},,treated_on_site,B1",
                arr + 12.0,
                arr + 20.0,
                1000.0,
                0.0
            )
            .unwrap();
        }
    }
    s
}

fn tiny_dir(dir: &Path) -> PathBuf {
    let mut inst = tiny_instance(&TinyLayout::default());
    inst.demand.zones[0].interarrival = vec![DistributionRef::exponential(90.0).unwrap()];
    inst.demand.zones[0].tag_probabilities = [0.3, 0.3, 0.3, 0.1];
    inst.horizon_minutes = 10.0 * 1440.0;
    inst.warmup_minutes = 1440.0;
    save_instance(&inst, dir).unwrap()
}

#[test]
fn ingest_recovers_constant_durations() {
    let tmp = tempfile::tempdir().unwrap();
    let missions = tmp.path().join("missions.csv");
    fs::write(&missions, mission_csv(60)).unwrap();
    let inst_dir = tmp.path().join("inst");
    let config = tiny_dir(&inst_dir);
    let out = tmp.path().join("out");
    let res = ingest_missions(&IngestArgs {
        missions,
        out: out.clone(),
        instance: Some(config),
        family: ParametricFamily::Exponential,
        alpha: 0.05,
        cell_area_km2: 10.0,
    })
    .unwrap();
    let expect = [
        (Phase::TelephoneTriage, 2.0),
        (Phase::AmbulanceAssignment, 1.0),
        (Phase::AmbulancePreparation, 3.0),
        (Phase::TreatmentOnSite, 12.0),
        (Phase::PatientLoad, 9.0),
        (Phase::PatientDischarge, 4.0),
    ];
    for (phase, v) in expect {
        for u in UrgencyClass::ALL {
            let s = &res.samples[&(phase, u)];
            assert!(!s.is_empty());
            assert!(s.iter().all(|&x| x == v), "{phase}/{u}: {s:?}");
        }
    }
    // Constant samples reject any exponential fit.
    let audit = fs::read_to_string(out.join("fit_audit.csv")).unwrap();
    assert!(audit.starts_with("phase,urgency,decision,D,critical\n"));
    assert!(
        audit.lines().skip(1).all(|l| l.split(',').nth(2) == Some("empirical")),
        "{audit}"
    );
    // Base-to-scene: nominal 5, observed 6.
    let obs = fs::read_to_string(out.join("calibration_observations.csv")).unwrap();
    assert!(
        obs.lines()
            .any(|l| l.starts_with("base_to_scene,") && l.ends_with(",5.0,6.0")),
        "{obs}"
    );
    let off = fs::read_to_string(out.join("offload.csv")).unwrap();
    assert_eq!(off.lines().nth(1).unwrap(), "E1,40,20,0.5,5.0");
    let st = fs::read_to_string(out.join("service_times.toml")).unwrap();
    assert!(st.contains("file = \"samples/telephone_triage_urgent.csv\""));
    assert_eq!(
        fs::read_to_string(out.join("samples/patient_load_urgent.csv"))
            .unwrap()
            .lines()
            .next(),
        Some("value")
    );
}

#[test]
fn ingest_counts_by_zone_and_slot() {
    let tmp = tempfile::tempdir().unwrap();
    let missions = tmp.path().join("m.csv");
    fs::write(&missions, mission_csv(40)).unwrap();
    let out = tmp.path().join("out");
    let res = ingest_missions(&IngestArgs {
        missions,
        out: out.clone(),
        instance: None,
        family: ParametricFamily::Exponential,
        alpha: 0.05,
        cell_area_km2: 10.0,
    })
    .unwrap();
    assert_eq!(res.slot_ids, ["00-07", "07-12", "12-18", "18-24"]);
    assert_eq!(res.counts.iter().flatten().sum::<u64>(), 40);
    let table = fs::read_to_string(out.join("zone_slot_counts.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("zone,00-07,07-12,12-18,18-24,total"));
    assert_eq!(table.lines().count(), 3);
    // Without an instance there are no nominal times to calibrate against.
    assert_eq!(res.calibration.len(), 0);
}

#[test]
fn ingest_names_missing_phases() {
    let tmp = tempfile::tempdir().unwrap();
    let missions = tmp.path().join("m.csv");
    let text: String = mission_csv(30)
        .lines()
        .filter(|l| !l.contains("treated_on_site"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&missions, text).unwrap();
    let err = ingest_missions(&IngestArgs {
        missions,
        out: tmp.path().join("out"),
        instance: None,
        family: ParametricFamily::Exponential,
        alpha: 0.05,
        cell_area_km2: 10.0,
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let msg = err.to_string();
    assert!(
        msg.contains("treatment_on_site/urgent") && msg.contains("treatment_on_site/non_urgent"),
        "{msg}"
    );
}

#[test]
fn mission_schema_errors_carry_row_numbers() {
    let bad = mission_csv(3).replacen("transported", "teleported", 1);
    let err = read_missions(bad.as_bytes()).unwrap_err();
    assert!(
        matches!(&err, CliError::Schema(m) if m.contains("row 3") && m.contains("teleported")),
        "{err}"
    );
    let err = read_missions("call_id,zone\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("ts_call_start"));
}

#[test]
fn timestamps_accept_minutes_and_dates() {
    assert_eq!(parse_timestamp("").unwrap(), None);
    assert_eq!(parse_timestamp("12.5").unwrap(), Some(12.5));
    assert_eq!(parse_timestamp("1970-01-05 01:30:00").unwrap(), Some(90.0));
    assert_eq!(parse_timestamp("1970-01-06T00:00").unwrap(), Some(1440.0));
    assert!(parse_timestamp("yesterday").is_err());
}

#[test]
fn calibrate_without_data_is_all_default() {
    let tmp = tempfile::tempdir().unwrap();
    let obs = tmp.path().join("obs.csv");
    fs::write(&obs, "leg,slot,urgency,t_rs,t_obs\n").unwrap();
    let out = tmp.path().join("cal");
    let pct = calibrate_observations(&CalibrateArgs {
        observations: obs,
        out: out.clone(),
        instance: None,
        min_count: 5,
        ratio_lo: 0.2,
        ratio_hi: 5.0,
    })
    .unwrap();
    assert_eq!(pct, 100.0);
    let pivot = fs::read_to_string(out.join("calibration_pivot.csv")).unwrap();
    // Five periods, two legs, two urgency classes.
    assert_eq!(pivot.lines().count(), 6);
    assert_eq!(pivot.lines().next().unwrap().split(',').count(), 5);
    assert!(pivot.lines().skip(1).all(|l| l.ends_with("1.000,1.000,1.000,1.000")));
}

#[test]
fn calibrated_table_loads_into_an_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let obs = tmp.path().join("obs.csv");
    let mut s = String::from("leg,slot,urgency,t_rs,t_obs\n");
    for i in 0..9 {
        writeln!(
            s,
            "base_to_scene,weekday_peak,urgent,{},{}",
            10.0 + i as f64,
            0.8 * (10.0 + i as f64)
        )
        .unwrap();
    }
    fs::write(&obs, s).unwrap();
    let inst_dir = tmp.path().join("inst");
    let config = tiny_dir(&inst_dir);
    calibrate_observations(&CalibrateArgs {
        observations: obs,
        out: inst_dir.clone(),
        instance: Some(config.clone()),
        min_count: 5,
        ratio_lo: 0.2,
        ratio_hi: 5.0,
    })
    .unwrap();
    let inst = load_instance(&config).unwrap();
    let a = inst.network.travel.calibration().alpha(
        emsim_core::calibration::TravelLeg::BaseToScene,
        "weekday_peak",
        UrgencyClass::Urgent,
    );
    assert!((a - 0.8).abs() < 1e-6);
}

fn sim(config: &Path, out: &Path, f: impl FnOnce(&mut SimulateArgs)) -> commands::SimulateOutcome {
    let mut args = SimulateArgs::new(config, out);
    args.replications = Some(3);
    args.seed = Some(5);
    f(&mut args);
    simulate(&args).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn tiny_simulation_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_dir(&tmp.path().join("inst"));
    let a = sim(&config, &tmp.path().join("a"), |_| {});
    let b = sim(&config, &tmp.path().join("b"), |a| a.jobs = 1);
    assert!(a.events > 0);
    for f in [
        "coverage_by_replication.csv",
        "coverage_summary.csv",
        "call_counts.csv",
        "events/rep_002.csv",
        "records/rep_000.csv",
    ] {
        assert_eq!(
            read(&tmp.path().join("a").join(f)),
            read(&tmp.path().join("b").join(f)),
            "{f}"
        );
    }
    assert_eq!(a.manifest.without_wall_clock(), b.manifest.without_wall_clock());
    let cov =
        read_replication_coverage(fs::File::open(tmp.path().join("a/coverage_by_replication.csv")).unwrap()).unwrap();
    assert_eq!(cov.len(), 3);
    assert!(cov.iter().all(|s| s.coverage[0].iter().all(Option::is_some)));
}

#[test]
fn manifest_echoes_default_horizon_and_warmup() {
    let tmp = tempfile::tempdir().unwrap();
    let mut inst = tiny_instance(&TinyLayout::default());
    inst.horizon_minutes = 547_200.0;
    inst.warmup_minutes = 21_600.0;
    inst.replications = 30;
    let config = save_instance(&inst, &tmp.path().join("inst")).unwrap();
    let o = sim(&config, &tmp.path().join("out"), |a| {
        a.replications = None;
        a.write_logs = false;
    });
    let m = RunManifest::read(&tmp.path().join("out")).unwrap();
    assert_eq!(m, o.manifest);
    assert_eq!(m.horizon_minutes, Some(547_200.0));
    assert_eq!(m.warmup_minutes, Some(21_600.0));
    assert_eq!(m.replications, Some(30));
    assert!(m.inputs.contains_key("instance/config.toml"));
}

#[test]
fn self_comparison_is_all_not_significant() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_dir(&tmp.path().join("inst"));
    sim(&config, &tmp.path().join("a"), |_| {});
    let rows = compare(&CompareArgs {
        baseline: tmp.path().join("a"),
        alternatives: vec![tmp.path().join("a")],
        out: tmp.path().join("cmp"),
    })
    .unwrap();
    assert_eq!((rows[0].improvements, rows[0].worsenings), (0, 0));
    let table = fs::read_to_string(tmp.path().join("cmp/paired_t.csv")).unwrap();
    assert_eq!(
        table.lines().next().unwrap(),
        "baseline,scenario,urgency,threshold_minutes,mean_diff,ci_lo,ci_hi,verdict"
    );
    assert_eq!(table.lines().count(), 1 + 2 * THRESHOLDS.len());
    assert!(table.lines().skip(1).all(|l| l.ends_with(",not_significant")));
}

#[test]
fn removing_capacity_mostly_worsens() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth_instance(&SynthArgs {
        profile: "rieti-like".into(),
        seed: 3,
        out: tmp.path().join("inst"),
    })
    .unwrap();
    let short = |a: &mut SimulateArgs| {
        a.replications = Some(10);
        a.horizon_minutes = Some(40.0 * 1440.0);
        a.warmup_minutes = Some(5.0 * 1440.0);
        a.write_logs = false;
    };
    sim(&config, &tmp.path().join("base"), short);
    sim(&config, &tmp.path().join("minus"), |a| {
        short(a);
        a.scenario = Some("rieti-minus-one".into());
    });
    let rows = compare(&CompareArgs {
        baseline: tmp.path().join("base"),
        alternatives: vec![tmp.path().join("minus")],
        out: tmp.path().join("cmp"),
    })
    .unwrap();
    assert_eq!(rows[0].improvements, 0);
    assert!(rows[0].worsenings >= 5, "{:?}", rows[0]);
}

#[test]
fn compare_rejects_mismatched_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_dir(&tmp.path().join("inst"));
    sim(&config, &tmp.path().join("a"), |_| {});
    sim(&config, &tmp.path().join("seed"), |a| a.seed = Some(6));
    sim(&config, &tmp.path().join("reps"), |a| a.replications = Some(4));
    let run = |alt: &str| {
        compare(&CompareArgs {
            baseline: tmp.path().join("a"),
            alternatives: vec![tmp.path().join(alt)],
            out: tmp.path().join("cmp"),
        })
        .unwrap_err()
    };
    assert!(matches!(
        run("seed"),
        CliError::SeedMismatch {
            baseline: 5,
            alternative: 6
        }
    ));
    assert!(matches!(
        run("reps"),
        CliError::ReplicationCountMismatch {
            baseline: 3,
            alternative: 4
        }
    ));
}

#[test]
fn validate_passes_and_fails_by_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_dir(&tmp.path().join("inst"));
    let o = sim(&config, &tmp.path().join("a"), |_| {});
    let mean = |k: usize| o.summaries.iter().map(|s| s.coverage[0][k].unwrap()).sum::<f64>() / 3.0;
    let targets = tmp.path().join("targets.csv");
    fs::write(
        &targets,
        format!("kpi,target\ncoverage:urgent:20,{}\nbase_share:B1,100\n", mean(2)),
    )
    .unwrap();
    let args = |tolerance| ValidateArgs {
        results: tmp.path().join("a"),
        targets: targets.clone(),
        tolerance,
        out: None,
    };
    let report = validate(&args(1000.0)).unwrap();
    assert!(report.passed());
    assert_eq!(report.rows.len(), 2);
    assert!(tmp.path().join("a/validation.csv").exists());
    // Base share is exactly 100 in every replication: zero-width interval.
    let strict = validate(&args(0.0)).unwrap();
    assert!(strict.rows.iter().find(|r| r.kpi == "base_share:B1").unwrap().pass);
    fs::write(&targets, "kpi,target\nno_such_kpi,1\n").unwrap();
    assert_eq!(validate(&args(5.0)).unwrap_err().exit_code(), 3);
}

#[test]
fn env_seed_overrides_flag() {
    assert_eq!(resolve_seed(Some(3), None).unwrap(), Some(3));
    assert_eq!(resolve_seed(Some(3), Some("17")).unwrap(), Some(17));
    assert_eq!(resolve_seed(None, Some(" ")).unwrap(), None);
    assert!(resolve_seed(Some(3), Some("x")).is_err());
}

#[test]
fn synth_twice_gives_identical_directories() {
    let tmp = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        synth_instance(&SynthArgs {
            profile: "rieti-like".into(),
            seed: 8,
            out: tmp.path().join(d),
        })
        .unwrap();
    }
    let a = RunManifest::read(&tmp.path().join("a")).unwrap();
    let b = RunManifest::read(&tmp.path().join("b")).unwrap();
    assert_eq!(a.without_wall_clock(), b.without_wall_clock());
    assert_eq!(a.outputs.len(), 5);
    assert!(synth_instance(&SynthArgs {
        profile: "atlantis".into(),
        seed: 1,
        out: tmp.path().join("c"),
    })
    .is_err());
}

fn emsim(args: &[&str], envs: &[(&str, &str)]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_emsim"))
        .args(args)
        .env_remove("EMSIM_SEED")
        .envs(envs.iter().copied())
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr),
    )
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |p: &str| tmp.path().join(p).to_string_lossy().into_owned();
    let config = tiny_dir(&tmp.path().join("inst"));
    let config = config.to_string_lossy().into_owned();
    let (code, _) = emsim(
        &["simulate", &config, "--replications", "2", "--out", &t("a")],
        &[("EMSIM_SEED", "99")],
    );
    assert_eq!(code, 0);
    assert_eq!(RunManifest::read(&tmp.path().join("a")).unwrap().base_seed, Some(99));

    fs::write(tmp.path().join("targets.csv"), "kpi,target\ncoverage:urgent:10,0\n").unwrap();
    let (code, out) = emsim(&["validate", &t("a"), &t("targets.csv"), "--tolerance", "0.001"], &[]);
    assert_eq!(code, 2, "{out}");

    fs::write(tmp.path().join("bad.csv"), "not,a,mission,file\n").unwrap();
    let (code, _) = emsim(&["ingest", &t("bad.csv"), "--out", &t("ing")], &[]);
    assert_eq!(code, 3);

    let (code, _) = emsim(&["simulate", &config, "--scenario", "nope", "--out", &t("b")], &[]);
    assert_eq!(code, 3);
}
