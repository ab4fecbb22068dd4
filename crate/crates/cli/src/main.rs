use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use emsim_cli::commands::{self, CalibrateArgs, CompareArgs, IngestArgs, SimulateArgs, SynthArgs, ValidateArgs};
use emsim_cli::{CliError, Result};
use emsim_core::stochastic::ParametricFamily;

#[derive(Parser)]
#[command(name = "emsim", version, about = "Ambulance emergency-system simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Exponential,
    Triangular,
}

#[derive(Subcommand)]
enum Command {
    /// Extract service-time samples, call counts, square weights and
    /// calibration observations from historical missions.
    Ingest {
        missions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Instance providing slots and nominal travel times.
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "exponential")]
        family: Family,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 10.0)]
        cell_area_km2: f64,
    },
    /// Estimate travel-time correction factors from observations.
    Calibrate {
        observations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        min_count: usize,
        #[arg(long, default_value_t = 0.2)]
        ratio_lo: f64,
        #[arg(long, default_value_t = 5.0)]
        ratio_hi: f64,
    },
    /// Run replications of one scenario.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        replications: Option<u32>,
        /// Overridden by EMSIM_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        horizon_minutes: Option<f64>,
        #[arg(long)]
        warmup_minutes: Option<f64>,
        /// Skip per-replication event logs and mission records.
        #[arg(long)]
        no_logs: bool,
    },
    /// Paired-t comparison of alternatives against a baseline.
    Compare {
        baseline: PathBuf,
        #[arg(required = true)]
        alternatives: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic instance directory.
    Synth {
        #[arg(long, default_value = "rieti-like")]
        profile: String,
        /// Overridden by EMSIM_SEED.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check simulated KPIs against historical targets.
    Validate {
        results: PathBuf,
        targets: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn env_seed(flag: Option<u64>) -> Result<Option<u64>> {
    commands::resolve_seed(flag, std::env::var("EMSIM_SEED").ok().as_deref())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            missions,
            out,
            instance,
            family,
            alpha,
            cell_area_km2,
        } => {
            let res = commands::ingest_missions(&IngestArgs {
                missions,
                out: out.clone(),
                instance,
                family: match family {
                    Family::Exponential => ParametricFamily::Exponential,
                    Family::Triangular => ParametricFamily::Triangular,
                },
                alpha,
                cell_area_km2,
            })?;
            println!(
                "ingested: {} samples, {} zones, {} squares, {} calibration observations -> {}",
                res.samples.values().map(Vec::len).sum::<usize>(),
                res.zones.len(),
                res.grid.cells.len(),
                res.calibration.len(),
                out.display()
            );
        }
        Command::Calibrate {
            observations,
            out,
            instance,
            min_count,
            ratio_lo,
            ratio_hi,
        } => {
            let pct = commands::calibrate_observations(&CalibrateArgs {
                observations,
                out: out.clone(),
                instance,
                min_count,
                ratio_lo,
                ratio_hi,
            })?;
            println!(
                "calibration table -> {} ({pct:.1}% of groups at the default)",
                out.display()
            );
        }
        Command::Simulate {
            config,
            scenario,
            replications,
            seed,
            out,
            jobs,
            horizon_minutes,
            warmup_minutes,
            no_logs,
        } => {
            let args = SimulateArgs {
                config,
                scenario,
                replications,
                seed: env_seed(seed)?,
                out: out.clone(),
                jobs,
                horizon_minutes,
                warmup_minutes,
                write_logs: !no_logs,
            };
            let o = commands::simulate(&args)?;
            println!(
                "{} replication(s) of `{}`, {} events, seed {} -> {} ({:.1} s)",
                o.summaries.len(),
                o.manifest.scenario.as_deref().unwrap_or(""),
                o.events,
                o.manifest.base_seed.unwrap_or_default(),
                out.display(),
                o.manifest.wall_seconds
            );
        }
        Command::Compare {
            baseline,
            alternatives,
            out,
        } => {
            let rows = commands::compare(&CompareArgs {
                baseline,
                alternatives,
                out,
            })?;
            for r in rows {
                println!(
                    "{}: {} improvements, {} worsenings ({})",
                    r.scenario, r.improvements, r.worsenings, r.label
                );
            }
        }
        Command::Synth { profile, seed, out } => {
            let seed = env_seed(Some(seed))?.unwrap_or(seed);
            let config = commands::synth_instance(&SynthArgs { profile, seed, out })?;
            println!("instance -> {}", config.display());
        }
        Command::Validate {
            results,
            targets,
            tolerance,
            out,
        } => {
            let report = commands::validate(&ValidateArgs {
                results,
                targets,
                tolerance,
                out,
            })?;
            for r in &report.rows {
                println!(
                    "{} {}: avg {:.3} [{:.3}, {:.3}] target {:.3} gap {:.3}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.kpi,
                    r.stat.avg,
                    r.stat.lb,
                    r.stat.ub,
                    r.target.value,
                    r.gap
                );
            }
            if !report.passed() {
                let failed = report.rows.iter().filter(|r| !r.pass).count();
                return Err(CliError::ValidationFailed(format!(
                    "{failed} of {} KPI(s) outside tolerance {}",
                    report.rows.len(),
                    report.tolerance_pct
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("emsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
