//! Command-line front end. Every stage is independently scriptable through
//! the shared file formats: traces as JSONL, timelines as CSV, reports as
//! JSON. Exit codes: 0 success, 2 config error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adaptleak::attacker::{attack_pipeline, AttackOptions};
use adaptleak::harness::{
    report_text, run_experiment, serve_with_method, sweep, ExperimentConfig, HarnessError,
    SweepAxis,
};
use adaptleak::infodetect::{classify_observers, update_mi_tables, SuspicionLedger};
use adaptleak::mitigation::{effective_mi, MitigationMethod};
use adaptleak::registry::{build_protection_lists, init_mi_tables, MethodId, MAX_ACTIONS_PER_RULE};
use adaptleak::scenario::simulate;
use adaptleak::trace::{
    read_observations, read_series, write_observations, write_records, write_series,
    ObservationLog,
};

#[derive(Parser)]
#[command(
    name = "adaptleak",
    version,
    about = "Context-adaptation side-channel lab: simulate, attack, detect, mitigate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a trace (records + tick series) from a config's scenario
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        days: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the clustering attack on persisted timelines
    Attack {
        /// Truth series CSV (t,context,actions...)
        #[arg(long)]
        series: PathBuf,
        /// Observation CSV (t,actions...); defaults to the full truth view
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Directory for attack_report.json and predicted.csv
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip greedy feature selection and cluster on all columns
        #[arg(long)]
        all_features: bool,
        /// Add time-of-day and day-of-week features (cloud scenarios)
        #[arg(long)]
        time_features: bool,
    },
    /// Build MI tables and suspicion scores for the configured observers
    Detect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        days: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve a simulated trace through one fixed mitigation method
    Mitigate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// none | delay | suppression | row_mask | feature_mask
        #[arg(long)]
        method: String,
        /// delay ticks, suppression k, or masking probability
        #[arg(long, default_value_t = 0.0)]
        magnitude: f64,
        #[arg(long)]
        days: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full simulate -> detect -> mitigate -> attack loop
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        days: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep one axis; every point is an independent seeded run
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// threshold | mask_p | suppress_k
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values
        #[arg(long)]
        values: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a report.json
    Report {
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(
    path: &Path,
    days: Option<u64>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(days) = days {
        cfg.days = days;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cmd: Cmd) -> Result<(), HarnessError> {
    match cmd {
        Cmd::Simulate {
            config,
            out,
            days,
            seed,
        } => {
            let cfg = load_config(&config, days, seed)?;
            let sc = cfg.scenario.build(cfg.seed)?;
            let sim = simulate(&sc, cfg.days, cfg.seed)?;
            std::fs::create_dir_all(&out)?;
            write_records(&out.join("trace.jsonl"), &sim.log)?;
            write_series(&out.join("series.csv"), &sim.series)?;
            println!(
                "simulated {} days: {} records, {} overrides -> {}",
                cfg.days,
                sim.log.len(),
                sim.overrides.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Attack {
            series,
            observations,
            out,
            seed,
            all_features,
            time_features,
        } => {
            let truth = read_series(&series)?;
            let obs = match observations {
                Some(path) => read_observations(&path, "observer")?,
                None => ObservationLog::from_series(&truth, &truth.action_names, "observer"),
            };
            let report = attack_pipeline(
                &obs,
                &truth,
                &AttackOptions {
                    feature_selection: !all_features,
                    time_features,
                    seed,
                    restarts: 10,
                },
            )?;
            println!(
                "accuracy {:.4} (baseline {:.4}, k={}, features: {})",
                report.accuracy,
                report.baseline,
                report.chosen_k,
                report.dominant_features.join(",")
            );
            if let Some(out) = out {
                std::fs::create_dir_all(&out)?;
                std::fs::write(
                    out.join("attack_report.json"),
                    serde_json::to_string_pretty(&report)
                        .map_err(|e| HarnessError::Runtime(e.to_string()))?,
                )?;
                let mut w = csv::Writer::from_path(out.join("predicted.csv"))
                    .map_err(|e| HarnessError::Runtime(e.to_string()))?;
                w.write_record(["t", "predicted"])
                    .map_err(|e| HarnessError::Runtime(e.to_string()))?;
                for (t, p) in report.predicted.iter().enumerate() {
                    w.write_record([t.to_string().as_str(), p])
                        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
                }
                w.flush()?;
            }
            Ok(())
        }
        Cmd::Detect {
            config,
            out,
            days,
            seed,
        } => {
            let cfg = load_config(&config, days, seed)?;
            let sc = cfg.scenario.build(cfg.seed)?;
            let protection = build_protection_lists(&sc.registry);
            let sim = simulate(&sc, cfg.days, cfg.seed)?;
            let mut tables = init_mi_tables(&sc.registry, MAX_ACTIONS_PER_RULE)?;
            update_mi_tables(&mut tables, &sim.series);
            let mut ledger = SuspicionLedger::new();
            for spec in &cfg.observers {
                for action in &spec.actions {
                    let action = MethodId::new(action)?;
                    let rule_id = protection.owner(&action).ok_or_else(|| {
                        HarnessError::Config(format!("`{action}` is not protected"))
                    })?;
                    ledger.note(&spec.id, rule_id, &action, &tables)?;
                }
            }
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("tables.json"),
                serde_json::to_string_pretty(&tables.to_json())
                    .map_err(|e| HarnessError::Runtime(e.to_string()))?,
            )?;
            std::fs::write(
                out.join("ledger.json"),
                serde_json::to_string_pretty(&ledger.to_json(&tables))
                    .map_err(|e| HarnessError::Runtime(e.to_string()))?,
            )?;
            let flagged = classify_observers(&ledger, &cfg.detection);
            for spec in &cfg.observers {
                println!(
                    "{}: suspicion {:.4}{}",
                    spec.id,
                    ledger.max_score(&spec.id),
                    if flagged.contains(&spec.id) {
                        " FLAGGED"
                    } else {
                        ""
                    }
                );
            }
            Ok(())
        }
        Cmd::Mitigate {
            config,
            out,
            method,
            magnitude,
            days,
            seed,
        } => {
            let cfg = load_config(&config, days, seed)?;
            let method = parse_method(&method, magnitude)?;
            let sc = cfg.scenario.build(cfg.seed)?;
            let protection = build_protection_lists(&sc.registry);
            let sim = simulate(&sc, cfg.days, cfg.seed)?;
            std::fs::create_dir_all(&out)?;
            for spec in &cfg.observers {
                let actions: Vec<MethodId> = spec
                    .actions
                    .iter()
                    .map(|a| MethodId::new(a).map_err(HarnessError::from))
                    .collect::<Result<_, _>>()?;
                let rule_id = protection.owner(&actions[0]).ok_or_else(|| {
                    HarnessError::Config(format!("`{}` is not protected", actions[0]))
                })?;
                let served =
                    serve_with_method(&sc, &sim, &actions, rule_id, method, &spec.id, cfg.seed)?;
                write_observations(&out.join(format!("observations_{}.csv", spec.id)), &served)?;
                println!(
                    "{}: effective MI {:.4}",
                    spec.id,
                    effective_mi(&served, &sim.series)
                );
            }
            Ok(())
        }
        Cmd::Experiment {
            config,
            out,
            days,
            seed,
        } => {
            let cfg = load_config(&config, days, seed)?;
            run_experiment(&cfg, &out)?;
            println!("{}", report_text(&out.join("report.json"))?);
            Ok(())
        }
        Cmd::Sweep {
            config,
            out,
            axis,
            values,
            seed,
        } => {
            let cfg = load_config(&config, None, seed)?;
            let axis: SweepAxis = axis.parse()?;
            let values: Vec<f64> = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| HarnessError::Config(format!("bad sweep value `{v}`")))
                })
                .collect::<Result<_, _>>()?;
            let rows = sweep(&cfg, axis, &values, &out)?;
            for row in &rows {
                println!(
                    "{} mi={} acc={} fp={} fn={}",
                    row.value,
                    fmt_opt(row.effective_mi),
                    fmt_opt(row.accuracy),
                    fmt_opt(row.fp_rate),
                    fmt_opt(row.fn_rate)
                );
            }
            Ok(())
        }
        Cmd::Report { report } => {
            print!("{}", report_text(&report)?);
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn parse_method(name: &str, magnitude: f64) -> Result<MitigationMethod, HarnessError> {
    match name {
        "none" => Ok(MitigationMethod::None),
        "delay" => Ok(MitigationMethod::Delay {
            d: magnitude.round().max(0.0) as u64,
        }),
        "suppression" => Ok(MitigationMethod::Suppression {
            k: magnitude.round().max(1.0) as usize,
        }),
        "row_mask" => {
            check_probability(magnitude)?;
            Ok(MitigationMethod::RowMask { p: magnitude })
        }
        "feature_mask" => {
            check_probability(magnitude)?;
            Ok(MitigationMethod::FeatureMask { p: magnitude })
        }
        other => Err(HarnessError::Config(format!(
            "unknown method `{other}` (none|delay|suppression|row_mask|feature_mask)"
        ))),
    }
}

fn check_probability(p: f64) -> Result<(), HarnessError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(HarnessError::Config(format!(
            "masking probability {p} outside [0,1]"
        )))
    }
}
