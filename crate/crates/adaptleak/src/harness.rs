//! Experiment orchestration: build a scenario, run the
//! simulate -> detect -> mitigate loop tick by tick, attack the resulting
//! observer timelines, sweep parameters, and emit report files.
//!
//! Every emitted file is a pure function of (config, seed); wall-clock
//! timings go to stderr only.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacker::{attack_pipeline, AttackOptions, AttackReport};
use crate::infodetect::{
    classify_observers, fp_fn_sweep, update_mi_tables, DetectionConfig, FpFnPoint, SuspicionLedger,
};
use crate::mitigation::{
    controller_step, effective_mi, AuditEvent, ControllerOutcome, Ladder, Mediator,
    MitigationError, MitigationMethod, MitigationState,
};
use crate::registry::{
    build_protection_lists, init_mi_tables, MethodId, ProtectionLists, MAX_ACTIONS_PER_RULE,
};
use crate::scenario::{build_phone_preset, build_smart_home_preset, simulate, Scenario, SimOutput};
use crate::seed::mix;
use crate::trace::{write_observations, write_records, write_series, ObservationLog, Tick};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for config errors, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}

impl From<crate::scenario::ScenarioError> for HarnessError {
    fn from(e: crate::scenario::ScenarioError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<crate::registry::RegistryError> for HarnessError {
    fn from(e: crate::registry::RegistryError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<crate::trace::TraceError> for HarnessError {
    fn from(e: crate::trace::TraceError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<crate::attacker::AttackError> for HarnessError {
    fn from(e: crate::attacker::AttackError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<crate::infodetect::DetectError> for HarnessError {
    fn from(e: crate::infodetect::DetectError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<MitigationError> for HarnessError {
    fn from(e: MitigationError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

/// Scenario source: a named preset with knobs, or a full inline scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSpec {
    Preset {
        preset: String,
        #[serde(default)]
        profiles: Option<usize>,
        #[serde(default)]
        lambda_per_hour: Option<f64>,
    },
    Inline { scenario: Box<Scenario> },
}

impl ScenarioSpec {
    pub fn build(&self, seed: u64) -> Result<Scenario, HarnessError> {
        match self {
            ScenarioSpec::Preset {
                preset,
                profiles,
                lambda_per_hour,
            } => {
                let mut sc = match preset.as_str() {
                    "phone" => build_phone_preset(profiles.unwrap_or(5), seed)?,
                    "smart_home" => build_smart_home_preset(seed)?,
                    other => {
                        return Err(HarnessError::Config(format!("unknown preset `{other}`")))
                    }
                };
                if let Some(rate) = lambda_per_hour {
                    if *rate < 0.0 {
                        return Err(HarnessError::Config("negative override rate".into()));
                    }
                    sc.noise.rate_per_hour = *rate;
                }
                Ok(sc)
            }
            ScenarioSpec::Inline { scenario } => {
                scenario.validate()?;
                Ok((**scenario).clone())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObserverSpec {
    pub id: String,
    /// Protected getters this observer polls.
    pub actions: Vec<String>,
    /// Query period in ticks.
    #[serde(default = "default_cadence")]
    pub cadence: Tick,
}

fn default_cadence() -> Tick {
    1
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepAxes {
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub mask_ps: Vec<f64>,
    #[serde(default)]
    pub suppress_ks: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub days: u64,
    pub seed: u64,
    pub observers: Vec<ObserverSpec>,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub ladder: Ladder,
    /// Escalating mitigation for flagged observers.
    #[serde(default = "default_true")]
    pub mitigation: bool,
    /// Include time-of-day / day-of-week attack features (cloud scenarios).
    #[serde(default)]
    pub time_features: bool,
    #[serde(default)]
    pub sweep: SweepAxes,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    fn validate(&self, protection: &ProtectionLists) -> Result<(), HarnessError> {
        if self.days < 1 {
            return Err(HarnessError::Config("days must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.detection.alarm_threshold) {
            return Err(HarnessError::Config(format!(
                "alarm threshold {} outside [0,1]",
                self.detection.alarm_threshold
            )));
        }
        let increasing = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(HarnessError::Config(format!(
                    "{name} ladder magnitudes must strictly increase"
                )))
            }
        };
        increasing(
            "suppression",
            self.ladder.suppression_ks.windows(2).all(|w| w[0] < w[1]),
        )?;
        increasing("mask", self.ladder.mask_ps.windows(2).all(|w| w[0] < w[1]))?;
        if self.ladder.mask_ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(HarnessError::Config("mask probability outside [0,1]".into()));
        }
        if self.ladder.window < 1 {
            return Err(HarnessError::Config("controller window must be positive".into()));
        }
        for obs in &self.observers {
            if obs.cadence < 1 {
                return Err(HarnessError::Config(format!(
                    "observer `{}` has zero cadence",
                    obs.id
                )));
            }
            for action in &obs.actions {
                let action = MethodId::new(action)?;
                if protection.owner(&action).is_none() {
                    return Err(HarnessError::Config(format!(
                        "observer `{}` queries `{action}` which no rule protects",
                        obs.id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObserverReport {
    pub id: String,
    pub before: AttackReport,
    pub after: AttackReport,
    /// Suspicion score at each controller window end.
    pub suspicion: Vec<f64>,
    /// Effective MI of the served values over each window.
    pub effective_mi: Vec<f64>,
    /// Attack accuracy over each window's served values.
    pub window_accuracy: Vec<f64>,
    pub flagged_at: Option<Tick>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub days: u64,
    pub baseline: f64,
    pub observers: Vec<ObserverReport>,
    #[serde(default)]
    pub fp_fn: Option<Vec<FpFnPoint>>,
    /// Wall-clock seconds per stage; stderr only, never in report files.
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

/// Run the full loop and emit `report.json`, `results.csv`, `trace.jsonl`,
/// `series.csv`, `audit.jsonl`, and per-observer observation/prediction CSVs
/// under `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentReport, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let mut timings = Vec::new();

    let t0 = Instant::now();
    let sc = cfg.scenario.build(cfg.seed)?;
    let protection = build_protection_lists(&sc.registry);
    cfg.validate(&protection)?;
    let sim = simulate(&sc, cfg.days, cfg.seed)?;
    timings.push(("simulate".to_string(), t0.elapsed().as_secs_f64()));

    write_records(&out_dir.join("trace.jsonl"), &sim.log)?;
    write_series(&out_dir.join("series.csv"), &sim.series)?;

    let t1 = Instant::now();
    let (mut observers, audit, ledger, tables) = event_loop(cfg, &sc, &sim, &protection)?;
    timings.push(("detect+mitigate".to_string(), t1.elapsed().as_secs_f64()));

    write_jsonl(&out_dir.join("audit.jsonl"), &audit)?;
    std::fs::write(
        out_dir.join("tables.json"),
        serde_json::to_string_pretty(&tables.to_json())
            .map_err(|e| HarnessError::Runtime(e.to_string()))?,
    )?;
    std::fs::write(
        out_dir.join("ledger.json"),
        serde_json::to_string_pretty(&ledger.to_json(&tables))
            .map_err(|e| HarnessError::Runtime(e.to_string()))?,
    )?;

    let t2 = Instant::now();
    let window = cfg.ladder.window;
    let horizon = sim.series.horizon();
    let n_windows = (horizon / window) as usize;
    let attack_opts = AttackOptions {
        feature_selection: true,
        time_features: cfg.time_features,
        seed: cfg.seed,
        restarts: 10,
    };

    let mut reports = Vec::new();
    let mut results_rows: Vec<(String, usize, f64, f64, f64)> = Vec::new();
    for obs in observers.iter_mut() {
        let served = ObservationLog {
            observer: obs.spec.id.clone(),
            actions: obs.actions.clone(),
            rows: std::mem::take(&mut obs.rows),
        };
        write_observations(
            &out_dir.join(format!("observations_{}.csv", obs.spec.id)),
            &served,
        )?;

        let clear = ObservationLog::from_series(&sim.series, &obs.actions, &obs.spec.id);
        let before = attack_pipeline(&clear, &sim.series, &attack_opts)?;
        let after = attack_pipeline(&served, &sim.series, &attack_opts)?;
        write_predicted(
            &out_dir.join(format!("predicted_{}.csv", obs.spec.id)),
            &after.predicted,
        )?;

        let mut suspicion = Vec::with_capacity(n_windows);
        let mut mi_trajectory = Vec::with_capacity(n_windows);
        let mut window_accuracy = Vec::with_capacity(n_windows);
        for w in 0..n_windows {
            let (start, end) = (w as Tick * window, (w as Tick + 1) * window);
            let slice = served.slice(start, end);
            let truth = sim.series.slice(start, end);
            let mi = effective_mi(&slice, &truth);
            let acc = attack_pipeline(&slice, &truth, &attack_opts)?.accuracy;
            suspicion.push(obs.window_suspicion[w]);
            mi_trajectory.push(mi);
            window_accuracy.push(acc);
            results_rows.push((obs.spec.id.clone(), w, obs.window_suspicion[w], mi, acc));
        }

        reports.push(ObserverReport {
            id: obs.spec.id.clone(),
            before,
            after,
            suspicion,
            effective_mi: mi_trajectory,
            window_accuracy,
            flagged_at: obs.flagged_at,
        });
    }
    timings.push(("attack".to_string(), t2.elapsed().as_secs_f64()));

    let baseline = crate::attacker::baseline_accuracy(&sim.series);
    let fp_fn = if cfg.sweep.thresholds.is_empty() || reports.len() < 2 {
        None
    } else {
        let scores: BTreeMap<String, f64> = reports
            .iter()
            .map(|r| (r.id.clone(), *r.suspicion.last().unwrap_or(&0.0)))
            .collect();
        let truth: BTreeMap<String, bool> = reports
            .iter()
            .map(|r| (r.id.clone(), r.before.accuracy > baseline))
            .collect();
        fp_fn_sweep(&scores, &truth, &cfg.sweep.thresholds).ok()
    };

    let report = ExperimentReport {
        seed: cfg.seed,
        days: cfg.days,
        baseline,
        observers: reports,
        fp_fn,
        timings,
    };

    write_results_csv(&out_dir.join("results.csv"), &results_rows)?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Runtime(e.to_string()))?,
    )?;
    for (stage, secs) in &report.timings {
        eprintln!("{stage}: {secs:.3}s");
    }
    Ok(report)
}

struct LoopObserver {
    spec: ObserverSpec,
    actions: Vec<MethodId>,
    owners: Vec<usize>,
    last: Vec<u32>,
    rows: Vec<Vec<u32>>,
    flagged_at: Option<Tick>,
    window_suspicion: Vec<f64>,
}

/// Tick-by-tick detection and mitigation. Returns the observers' served
/// timelines, the audit log, and the final ledger and tables.
fn event_loop(
    cfg: &ExperimentConfig,
    sc: &Scenario,
    sim: &SimOutput,
    protection: &ProtectionLists,
) -> Result<
    (
        Vec<LoopObserver>,
        Vec<AuditEvent>,
        SuspicionLedger,
        crate::registry::MiTables,
    ),
    HarnessError,
> {
    let horizon = sim.series.horizon();
    let window = cfg.ladder.window;
    let mut tables = init_mi_tables(&sc.registry, MAX_ACTIONS_PER_RULE)?;
    let mut ledger = SuspicionLedger::new();
    let mut mediator = Mediator::new();
    let mut audit: Vec<AuditEvent> = Vec::new();

    let mut observers: Vec<LoopObserver> = cfg
        .observers
        .iter()
        .map(|spec| {
            let actions: Vec<MethodId> = spec
                .actions
                .iter()
                .map(|a| MethodId::new(a))
                .collect::<Result<_, _>>()?;
            let owners = actions
                .iter()
                .map(|a| protection.owner(a).expect("validated"))
                .collect();
            Ok(LoopObserver {
                actions,
                owners,
                last: vec![0; spec.actions.len()],
                rows: Vec::with_capacity(horizon as usize),
                flagged_at: None,
                window_suspicion: Vec::new(),
                spec: spec.clone(),
            })
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut next_record = 0usize;
    for t in 0..horizon {
        // adaptation events open new mediation intervals
        while next_record < sim.log.len() && sim.log[next_record].t == t {
            let rec = &sim.log[next_record];
            mediator.on_adaptation(rec);
            for obs in &observers {
                if obs.flagged_at.is_some() {
                    if let Some(state) = mediator.state_mut(&obs.spec.id, rec.rule_id) {
                        audit.push(AuditEvent {
                            t,
                            observer: obs.spec.id.clone(),
                            method: state.method_name(),
                            magnitude: state.magnitude(),
                            event: "serve".into(),
                        });
                    }
                }
            }
            next_record += 1;
        }

        if t > 0 && t % cfg.detection.refresh_every == 0 {
            let prefix = sim.series.slice(0, t);
            update_mi_tables(&mut tables, &prefix);
            ledger.refresh(&tables);
        }

        for obs in observers.iter_mut() {
            if t % obs.spec.cadence == 0 {
                for (i, action) in obs.actions.iter().enumerate() {
                    let rule_id = obs.owners[i];
                    obs.last[i] = mediator.get(&sim.series, &obs.spec.id, rule_id, action, t)?;
                    ledger.note(&obs.spec.id, rule_id, action, &tables)?;
                }
            }
            obs.rows.push(obs.last.clone());
        }

        if cfg.mitigation {
            let flagged = classify_observers(&ledger, &cfg.detection);
            for obs in observers.iter_mut() {
                if obs.flagged_at.is_none() && flagged.contains(&obs.spec.id) {
                    obs.flagged_at = Some(t);
                    let mut rules: Vec<usize> = obs.owners.clone();
                    rules.sort_unstable();
                    rules.dedup();
                    for rule_id in rules {
                        let rule = sc.registry.rule(rule_id).expect("validated");
                        let initial = sc.initial_vector().project(&rule.action_set());
                        let mut state = MitigationState::activated(
                            &obs.spec.id,
                            rule_id,
                            &cfg.ladder,
                            initial,
                            mix(cfg.seed, mix(rule_id as u64, hash_id(&obs.spec.id))),
                        );
                        for rec in sim.log.iter().take(next_record) {
                            if rec.rule_id == rule_id {
                                state.on_adaptation_event(rec);
                            }
                        }
                        audit.push(AuditEvent {
                            t,
                            observer: obs.spec.id.clone(),
                            method: state.method_name(),
                            magnitude: state.magnitude(),
                            event: "switch".into(),
                        });
                        mediator.flag(state);
                    }
                }
            }
        }

        // controller window boundaries
        if (t + 1) % window == 0 {
            let w_start = t + 1 - window;
            let truth = sim.series.slice(w_start, t + 1);
            for obs in observers.iter_mut() {
                obs.window_suspicion.push(ledger.max_score(&obs.spec.id));
                if obs.flagged_at.is_none() {
                    continue;
                }
                let slice = ObservationLog {
                    observer: obs.spec.id.clone(),
                    actions: obs.actions.clone(),
                    rows: obs.rows[w_start as usize..=t as usize].to_vec(),
                };
                let effective = effective_mi(&slice, &truth);
                let mut rules: Vec<usize> = obs.owners.clone();
                rules.sort_unstable();
                rules.dedup();
                for rule_id in rules {
                    if let Some(state) = mediator.state_mut(&obs.spec.id, rule_id) {
                        let event = match controller_step(
                            state,
                            &cfg.ladder,
                            effective,
                            cfg.detection.alarm_threshold,
                        ) {
                            Ok(ControllerOutcome::Held) => None,
                            Ok(ControllerOutcome::Escalated) => Some("escalate"),
                            Ok(ControllerOutcome::Switched) => Some("switch"),
                            Err(MitigationError::LadderExhausted) => Some("exhausted"),
                            Err(e) => return Err(e.into()),
                        };
                        if let Some(event) = event {
                            audit.push(AuditEvent {
                                t,
                                observer: obs.spec.id.clone(),
                                method: state.method_name(),
                                magnitude: state.magnitude(),
                                event: event.into(),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok((observers, audit, ledger, tables))
}

fn hash_id(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x1000_0000_01b3)
    })
}

/// Apply one fixed mitigation method to a whole run post hoc: feed every
/// record, then serve the full horizon.
pub fn serve_with_method(
    sc: &Scenario,
    sim: &SimOutput,
    actions: &[MethodId],
    rule_id: usize,
    method: MitigationMethod,
    observer: &str,
    seed: u64,
) -> Result<ObservationLog, HarnessError> {
    let rule = sc
        .registry
        .rule(rule_id)
        .ok_or_else(|| HarnessError::Config(format!("no rule {rule_id}")))?;
    let initial = sc.initial_vector().project(&rule.action_set());
    let mut state = MitigationState::with_method(observer, rule_id, method, initial, seed);
    for rec in &sim.log {
        if rec.rule_id == rule_id {
            state.on_adaptation_event(rec);
        }
    }
    let rows: Vec<Vec<u32>> = (0..sim.series.horizon())
        .map(|t| {
            actions
                .iter()
                .map(|a| state.serve(&sim.series, a, t))
                .collect::<Result<_, _>>()
        })
        .collect::<Result<_, MitigationError>>()?;
    Ok(ObservationLog {
        observer: observer.to_string(),
        actions: actions.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Threshold,
    MaskP,
    SuppressK,
}

impl std::str::FromStr for SweepAxis {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "threshold" => Ok(SweepAxis::Threshold),
            "mask_p" => Ok(SweepAxis::MaskP),
            "suppress_k" => Ok(SweepAxis::SuppressK),
            other => Err(HarnessError::Config(format!(
                "unknown sweep axis `{other}` (threshold|mask_p|suppress_k)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub effective_mi: Option<f64>,
    pub accuracy: Option<f64>,
    pub fp_rate: Option<f64>,
    pub fn_rate: Option<f64>,
}

/// One curve: each axis value evaluated on an independent run from the same
/// config seed. Points may run in parallel (`ADAPTLEAK_THREADS`); the CSV is
/// written in axis order either way.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    out_dir: &Path,
) -> Result<Vec<SweepRow>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let sc = cfg.scenario.build(cfg.seed)?;
    let protection = build_protection_lists(&sc.registry);
    cfg.validate(&protection)?;
    let sim = simulate(&sc, cfg.days, cfg.seed)?;

    let rows = match axis {
        SweepAxis::Threshold => {
            let mut tables = init_mi_tables(&sc.registry, MAX_ACTIONS_PER_RULE)?;
            update_mi_tables(&mut tables, &sim.series);
            let mut ledger = SuspicionLedger::new();
            let baseline = crate::attacker::baseline_accuracy(&sim.series);
            let mut scores = BTreeMap::new();
            let mut truth = BTreeMap::new();
            for spec in &cfg.observers {
                let actions: Vec<MethodId> = spec
                    .actions
                    .iter()
                    .map(|a| MethodId::new(a))
                    .collect::<Result<_, _>>()?;
                for action in &actions {
                    let rule_id = protection.owner(action).expect("validated");
                    ledger.note(&spec.id, rule_id, action, &tables)?;
                }
                let clear = ObservationLog::from_series(&sim.series, &actions, &spec.id);
                let report = attack_pipeline(
                    &clear,
                    &sim.series,
                    &AttackOptions {
                        seed: cfg.seed,
                        time_features: cfg.time_features,
                        ..Default::default()
                    },
                )?;
                scores.insert(spec.id.clone(), ledger.max_score(&spec.id));
                truth.insert(spec.id.clone(), report.accuracy > baseline);
            }
            let curve = fp_fn_sweep(&scores, &truth, values)?;
            curve
                .into_iter()
                .map(|p| SweepRow {
                    value: p.threshold,
                    effective_mi: None,
                    accuracy: None,
                    fp_rate: Some(p.fp_rate),
                    fn_rate: Some(p.fn_rate),
                })
                .collect()
        }
        SweepAxis::MaskP | SweepAxis::SuppressK => {
            let point = |&value: &f64| -> Result<SweepRow, HarnessError> {
                let method = match axis {
                    SweepAxis::MaskP => MitigationMethod::FeatureMask { p: value },
                    SweepAxis::SuppressK => MitigationMethod::Suppression {
                        k: value.round().max(1.0) as usize,
                    },
                    SweepAxis::Threshold => unreachable!(),
                };
                let mut mi_total = 0.0;
                let mut acc_total = 0.0;
                for spec in &cfg.observers {
                    let actions: Vec<MethodId> = spec
                        .actions
                        .iter()
                        .map(|a| MethodId::new(a))
                        .collect::<Result<_, _>>()?;
                    let rule_id = protection.owner(&actions[0]).expect("validated");
                    let served = serve_with_method(
                        &sc,
                        &sim,
                        &actions,
                        rule_id,
                        method,
                        &spec.id,
                        mix(cfg.seed, hash_id(&spec.id)),
                    )?;
                    mi_total += effective_mi(&served, &sim.series);
                    acc_total += attack_pipeline(
                        &served,
                        &sim.series,
                        &AttackOptions {
                            seed: cfg.seed,
                            time_features: cfg.time_features,
                            ..Default::default()
                        },
                    )?
                    .accuracy;
                }
                let n = cfg.observers.len().max(1) as f64;
                Ok(SweepRow {
                    value,
                    effective_mi: Some(mi_total / n),
                    accuracy: Some(acc_total / n),
                    fp_rate: None,
                    fn_rate: None,
                })
            };
            run_points(values, point)?
        }
    };

    let name = match axis {
        SweepAxis::Threshold => "sweep_threshold.csv",
        SweepAxis::MaskP => "sweep_mask_p.csv",
        SweepAxis::SuppressK => "sweep_suppress_k.csv",
    };
    write_sweep_csv(&out_dir.join(name), &rows)?;
    Ok(rows)
}

/// Evaluate independent sweep points, honoring `ADAPTLEAK_THREADS`.
fn run_points<F>(values: &[f64], point: F) -> Result<Vec<SweepRow>, HarnessError>
where
    F: Fn(&f64) -> Result<SweepRow, HarnessError> + Sync,
{
    let threads: usize = std::env::var("ADAPTLEAK_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);
    if threads <= 1 || values.len() <= 1 {
        return values.iter().map(&point).collect();
    }
    let results: Vec<Result<SweepRow, HarnessError>> = std::thread::scope(|scope| {
        let chunks: Vec<_> = values
            .chunks(values.len().div_ceil(threads))
            .map(|chunk| scope.spawn(|| chunk.iter().map(&point).collect::<Vec<_>>()))
            .collect();
        chunks
            .into_iter()
            .flat_map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    results.into_iter().collect()
}

/// Human-readable summary of a report file.
pub fn report_text(path: &Path) -> Result<String, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let report: ExperimentReport =
        serde_json::from_str(&text).map_err(|e| HarnessError::SchemaMismatch(e.to_string()))?;
    let mut out = String::new();
    out.push_str(&format!(
        "experiment: seed {}, {} days, baseline accuracy {:.3}\n",
        report.seed, report.days, report.baseline
    ));
    if report.observers.is_empty() {
        out.push_str("no observers\n");
        return Ok(out);
    }
    for obs in &report.observers {
        out.push_str(&format!("\nobserver {}\n", obs.id));
        out.push_str(&format!(
            "  attack accuracy: {:.3} unmitigated ({:+.1} pts vs baseline), {:.3} served\n",
            obs.before.accuracy,
            100.0 * (obs.before.accuracy - report.baseline),
            obs.after.accuracy
        ));
        out.push_str(&format!(
            "  dominant features: {} (k={})\n",
            obs.before.dominant_features.join(","),
            obs.before.chosen_k
        ));
        out.push_str(&format!(
            "  final suspicion: {:.3}\n",
            obs.suspicion.last().copied().unwrap_or(0.0)
        ));
        match obs.flagged_at {
            Some(t) => out.push_str(&format!("  flagged at tick {t}\n")),
            None => out.push_str("  never flagged\n"),
        }
        if let (Some(first), Some(last)) = (obs.effective_mi.first(), obs.effective_mi.last()) {
            out.push_str(&format!(
                "  effective MI: {first:.3} first window -> {last:.3} last window\n"
            ));
        }
    }
    if let Some(curve) = &report.fp_fn {
        out.push_str("\nthreshold sweep (threshold fp fn):\n");
        for p in curve {
            out.push_str(&format!(
                "  {:.2} {:.3} {:.3}\n",
                p.threshold, p.fp_rate, p.fn_rate
            ));
        }
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_predicted(path: &Path, predicted: &[String]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["t", "predicted"])
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    for (t, p) in predicted.iter().enumerate() {
        w.write_record([t.to_string().as_str(), p])
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_results_csv(
    path: &Path,
    rows: &[(String, usize, f64, f64, f64)],
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["observer", "window", "suspicion", "effective_mi", "attack_accuracy"])
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    for (observer, window, suspicion, mi, acc) in rows {
        w.write_record([
            observer.as_str(),
            &window.to_string(),
            &suspicion.to_string(),
            &mi.to_string(),
            &acc.to_string(),
        ])
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["value", "effective_mi", "accuracy", "fp_rate", "fn_rate"])
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        w.write_record([
            row.value.to_string(),
            fmt(row.effective_mi),
            fmt(row.accuracy),
            fmt(row.fp_rate),
            fmt(row.fn_rate),
        ])
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
