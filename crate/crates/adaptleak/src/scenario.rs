//! Synthetic human-in-the-loop scenarios: a time-inhomogeneous semi-Markov
//! schedule over context profiles, a profile-based adaptation policy, and
//! manual-override noise.
//!
//! Dwell is modeled as a per-minute leave hazard of `1 / mean dwell`, so the
//! expected occupancy of the chain can be computed exactly by forward
//! propagation, independent of the sampling code.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{AdaptationRule, MethodId, Registry};
use crate::seed::mix;
use crate::trace::{ActionVector, AdaptationLog, AdaptationRecord, Tick, TickSeries, TICKS_PER_DAY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("profile count {0} outside 2..=7")]
    ProfileCountOutOfRange(usize),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Transition matrix and per-context mean dwell for one hour-of-day bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourBucket {
    /// Row-stochastic, indexed [from][to] over the scenario's context order.
    pub transitions: Vec<Vec<f64>>,
    /// Mean dwell in minutes per context; the per-minute leave hazard is its
    /// reciprocal.
    pub dwell_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfile {
    /// One bucket per hour of day (24 total).
    pub hours: Vec<HourBucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub weekday: DayProfile,
    pub weekend: DayProfile,
}

/// Manual-override noise: a Poisson stream of single-action +-1 nudges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideNoise {
    pub rate_per_hour: f64,
    pub overridable: BTreeSet<MethodId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub registry: Registry,
    /// Context alphabet; simulation starts in the first symbol.
    pub contexts: Vec<String>,
    pub schedule: Schedule,
    /// Partial settings each profile configures; unset actions keep their
    /// previous value.
    pub policy: BTreeMap<String, ActionVector>,
    pub noise: OverrideNoise,
    /// Maximum level per action (minimum is 0).
    pub action_ranges: BTreeMap<MethodId, u32>,
    /// Levels before the first adaptation.
    pub defaults: ActionVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverrideEvent {
    pub t: Tick,
    pub action: MethodId,
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub series: TickSeries,
    pub log: Vec<AdaptationRecord>,
    pub overrides: Vec<OverrideEvent>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let k = self.contexts.len();
        if !(2..=7).contains(&k) {
            return Err(ScenarioError::ProfileCountOutOfRange(k));
        }
        for day in [&self.schedule.weekday, &self.schedule.weekend] {
            if day.hours.len() != 24 {
                return Err(ScenarioError::Invalid("need 24 hour buckets".into()));
            }
            for bucket in &day.hours {
                if bucket.transitions.len() != k || bucket.dwell_mean.len() != k {
                    return Err(ScenarioError::Invalid(
                        "bucket dimensions disagree with context count".into(),
                    ));
                }
                for row in &bucket.transitions {
                    if row.len() != k {
                        return Err(ScenarioError::Invalid("ragged transition row".into()));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                        return Err(ScenarioError::Invalid(format!(
                            "transition row sums to {sum}"
                        )));
                    }
                }
                if bucket.dwell_mean.iter().any(|&d| d < 1.0) {
                    return Err(ScenarioError::Invalid("dwell mean below one minute".into()));
                }
            }
        }
        for (ctx, partial) in &self.policy {
            if !self.contexts.contains(ctx) {
                return Err(ScenarioError::Invalid(format!(
                    "policy references unknown context `{ctx}`"
                )));
            }
            for (m, lvl) in partial.iter() {
                let max = self
                    .action_ranges
                    .get(m)
                    .ok_or_else(|| ScenarioError::Invalid(format!("no range for `{m}`")))?;
                if lvl > *max {
                    return Err(ScenarioError::Invalid(format!(
                        "policy sets `{m}`={lvl} above max {max}"
                    )));
                }
            }
        }
        for m in &self.noise.overridable {
            if !self.action_ranges.contains_key(m) {
                return Err(ScenarioError::Invalid(format!(
                    "overridable `{m}` has no range"
                )));
            }
        }
        Ok(())
    }

    /// All registry actions, in registry order.
    pub fn action_names(&self) -> Vec<MethodId> {
        self.registry
            .rules()
            .iter()
            .flat_map(|r| r.actions.iter().cloned())
            .collect()
    }

    /// Full level vector before the first adaptation: defaults for every
    /// registry action.
    pub fn initial_vector(&self) -> ActionVector {
        self.action_names()
            .iter()
            .map(|m| (m.clone(), self.defaults.get(m).unwrap_or(0)))
            .collect()
    }
}

fn m(name: &str) -> MethodId {
    MethodId::new(name).expect("preset method name")
}

/// The twelve observable phone settings, in registry order.
pub fn phone_settings() -> Vec<(MethodId, u32)> {
    vec![
        (m("RingerMode"), 2),
        (m("TouchSound"), 1),
        (m("WifiEnabled"), 1),
        (m("RingerVolume"), 15),
        (m("DisplayTimeout"), 5),
        (m("TouchVibration"), 1),
        (m("Wallpaper"), 9),
        (m("DialpadSound"), 1),
        (m("AlarmVolume"), 15),
        (m("MediaVolume"), 15),
        (m("ScreenBrightness"), 255),
        (m("LockSound"), 1),
    ]
}

const PHONE_CONTEXTS: [&str; 7] = [
    "home", "work", "commute", "gym", "errands", "social", "travel",
];

/// Per profile: (ringer mode, ringer volume, brightness base, media volume,
/// wifi, optional display timeout). Work rings silent (mode 0), which is
/// also what masked reads return.
const PHONE_PROFILES: [(u32, u32, u32, u32, u32, Option<u32>); 7] = [
    (1, 6, 140, 9, 1, Some(2)),  // home
    (0, 1, 180, 3, 1, Some(1)),  // work
    (2, 13, 230, 14, 0, None),   // commute
    (1, 10, 250, 15, 0, Some(3)), // gym
    (2, 8, 200, 11, 0, None),    // errands
    (2, 11, 220, 6, 0, None),    // social
    (0, 3, 90, 12, 0, Some(4)),  // travel
];

type RowSpec<'a> = (&'a str, f64, &'a [(&'a str, f64)]);

/// Build one bucket from per-context (dwell, leave-weights) specs, filtering
/// and renormalizing weights to the contexts actually present.
fn bucket(contexts: &[String], specs: &[RowSpec]) -> HourBucket {
    let k = contexts.len();
    let mut transitions = vec![vec![0.0; k]; k];
    let mut dwell_mean = vec![60.0; k];
    for (i, ctx) in contexts.iter().enumerate() {
        let spec = specs.iter().find(|(name, _, _)| name == ctx);
        let (dwell, weights): (f64, &[(&str, f64)]) = match spec {
            Some((_, d, w)) => (*d, w),
            None => (60.0, &[("home", 1.0)]),
        };
        dwell_mean[i] = dwell;
        let mut row = vec![0.0; k];
        let mut total = 0.0;
        for (target, weight) in weights {
            if let Some(j) = contexts.iter().position(|c| c == target) {
                row[j] += weight;
                total += weight;
            }
        }
        if total <= 0.0 {
            row[i] = 1.0; // nowhere to go: stay
        } else {
            for p in row.iter_mut() {
                *p /= total;
            }
        }
        transitions[i] = row;
    }
    HourBucket {
        transitions,
        dwell_mean,
    }
}

const STAY: f64 = 1.0e9;

fn phone_weekday(contexts: &[String]) -> DayProfile {
    let hours = (0..24)
        .map(|h| {
            let specs: Vec<RowSpec> = match h {
                0..=6 => vec![
                    ("home", STAY, &[("home", 1.0)] as &[_]),
                    ("work", 45.0, &[("commute", 0.8), ("home", 0.2)]),
                    ("commute", 20.0, &[("home", 1.0)]),
                    ("gym", 30.0, &[("home", 1.0)]),
                    ("errands", 30.0, &[("home", 1.0)]),
                    ("social", 40.0, &[("home", 1.0)]),
                    ("travel", 120.0, &[("home", 1.0)]),
                ],
                7 => vec![
                    ("home", 20.0, &[("commute", 0.9), ("work", 0.1)] as &[_]),
                    ("commute", 35.0, &[("work", 0.9), ("home", 0.1)]),
                    ("work", STAY, &[("commute", 1.0)]),
                    ("gym", 30.0, &[("commute", 0.7), ("home", 0.3)]),
                    ("errands", 30.0, &[("commute", 0.7), ("home", 0.3)]),
                    ("social", 30.0, &[("home", 1.0)]),
                    ("travel", 90.0, &[("home", 1.0)]),
                ],
                8..=15 => vec![
                    ("home", 300.0, &[("commute", 0.8), ("errands", 0.2)] as &[_]),
                    ("commute", 35.0, &[("work", 0.85), ("home", 0.15)]),
                    ("work", 5000.0, &[("commute", 0.7), ("errands", 0.3)]),
                    ("gym", 50.0, &[("commute", 0.6), ("home", 0.4)]),
                    ("errands", 45.0, &[("commute", 0.5), ("home", 0.5)]),
                    ("social", 60.0, &[("home", 0.7), ("commute", 0.3)]),
                    ("travel", 180.0, &[("home", 1.0)]),
                ],
                16 => vec![
                    ("home", 300.0, &[("errands", 0.5), ("gym", 0.5)] as &[_]),
                    ("commute", 35.0, &[("home", 0.8), ("errands", 0.1), ("gym", 0.1)]),
                    ("work", 90.0, &[("commute", 1.0)]),
                    ("gym", 55.0, &[("home", 1.0)]),
                    ("errands", 45.0, &[("home", 1.0)]),
                    ("social", 80.0, &[("home", 1.0)]),
                    ("travel", 150.0, &[("home", 1.0)]),
                ],
                17..=18 => vec![
                    ("home", 400.0, &[("gym", 0.4), ("errands", 0.3), ("social", 0.3)] as &[_]),
                    ("commute", 35.0, &[("home", 0.7), ("gym", 0.15), ("errands", 0.15)]),
                    ("work", 40.0, &[("commute", 1.0)]),
                    ("gym", 55.0, &[("home", 1.0)]),
                    ("errands", 45.0, &[("home", 1.0)]),
                    ("social", 90.0, &[("home", 1.0)]),
                    ("travel", 120.0, &[("home", 1.0)]),
                ],
                19..=21 => vec![
                    ("home", 500.0, &[("gym", 0.3), ("errands", 0.3), ("social", 0.4)] as &[_]),
                    ("commute", 30.0, &[("home", 1.0)]),
                    ("work", 40.0, &[("commute", 1.0)]),
                    ("gym", 60.0, &[("home", 1.0)]),
                    ("errands", 45.0, &[("home", 1.0)]),
                    ("social", 100.0, &[("home", 1.0)]),
                    ("travel", 120.0, &[("home", 1.0)]),
                ],
                _ => vec![
                    ("home", STAY, &[("home", 1.0)] as &[_]),
                    ("commute", 25.0, &[("home", 1.0)]),
                    ("work", 30.0, &[("commute", 0.8), ("home", 0.2)]),
                    ("gym", 25.0, &[("home", 1.0)]),
                    ("errands", 25.0, &[("home", 1.0)]),
                    ("social", 45.0, &[("home", 1.0)]),
                    ("travel", 90.0, &[("home", 1.0)]),
                ],
            };
            bucket(contexts, &specs)
        })
        .collect();
    DayProfile { hours }
}

fn phone_weekend(contexts: &[String]) -> DayProfile {
    let hours = (0..24)
        .map(|h| {
            let specs: Vec<RowSpec> = match h {
                0..=8 => vec![
                    ("home", STAY, &[("home", 1.0)] as &[_]),
                    ("work", 40.0, &[("home", 1.0)]),
                    ("commute", 25.0, &[("home", 1.0)]),
                    ("gym", 30.0, &[("home", 1.0)]),
                    ("errands", 30.0, &[("home", 1.0)]),
                    ("social", 60.0, &[("home", 1.0)]),
                    ("travel", 240.0, &[("home", 1.0)]),
                ],
                9..=19 => vec![
                    (
                        "home",
                        420.0,
                        &[
                            ("errands", 0.4),
                            ("social", 0.25),
                            ("gym", 0.25),
                            ("travel", 0.1),
                        ] as &[_],
                    ),
                    ("work", 60.0, &[("home", 1.0)]),
                    ("commute", 25.0, &[("home", 1.0)]),
                    ("gym", 55.0, &[("home", 1.0)]),
                    ("errands", 55.0, &[("home", 0.75), ("social", 0.25)]),
                    ("social", 110.0, &[("home", 1.0)]),
                    ("travel", 300.0, &[("home", 1.0)]),
                ],
                _ => vec![
                    ("home", STAY, &[("home", 1.0)] as &[_]),
                    ("work", 40.0, &[("home", 1.0)]),
                    ("commute", 25.0, &[("home", 1.0)]),
                    ("gym", 30.0, &[("home", 1.0)]),
                    ("errands", 30.0, &[("home", 1.0)]),
                    ("social", 50.0, &[("home", 1.0)]),
                    ("travel", 120.0, &[("home", 1.0)]),
                ],
            };
            bucket(contexts, &specs)
        })
        .collect();
    DayProfile { hours }
}

/// Phone-settings scenario: one rule mapping a location profile onto the 12
/// observable settings, with a commuter weekday routine. Deterministic in
/// `seed`, which only jitters screen brightness bases.
pub fn build_phone_preset(profiles: usize, seed: u64) -> Result<Scenario, ScenarioError> {
    if !(2..=7).contains(&profiles) {
        return Err(ScenarioError::ProfileCountOutOfRange(profiles));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(mix(seed, 0x70));
    let settings = phone_settings();
    let contexts: Vec<String> = PHONE_CONTEXTS[..profiles]
        .iter()
        .map(|c| c.to_string())
        .collect();

    let mut policy = BTreeMap::new();
    for (i, ctx) in contexts.iter().enumerate() {
        let (mode, volume, bright, media, wifi, timeout) = PHONE_PROFILES[i];
        let bright = (bright as i64 + rng.random_range(-4..=4i64)).clamp(0, 255) as u32;
        let mut partial = ActionVector::new();
        partial.set(m("RingerMode"), mode);
        partial.set(m("RingerVolume"), volume);
        partial.set(m("ScreenBrightness"), bright);
        partial.set(m("MediaVolume"), media);
        partial.set(m("WifiEnabled"), wifi);
        if let Some(t) = timeout {
            partial.set(m("DisplayTimeout"), t);
        }
        policy.insert(ctx.clone(), partial);
    }

    let registry = Registry::new(vec![AdaptationRule {
        rule_id: 0,
        contexts: vec![m("GpsLocation")],
        actions: settings.iter().map(|(a, _)| a.clone()).collect(),
    }])
    .expect("preset registry is valid");

    let mut defaults = ActionVector::new();
    for (action, _) in &settings {
        defaults.set(action.clone(), 0);
    }
    // idle-phone defaults; settings no profile touches stay at these levels
    defaults.set(m("RingerMode"), 1);
    defaults.set(m("RingerVolume"), 6);
    defaults.set(m("ScreenBrightness"), 140);
    defaults.set(m("MediaVolume"), 9);
    defaults.set(m("WifiEnabled"), 1);
    defaults.set(m("DisplayTimeout"), 2);
    defaults.set(m("Wallpaper"), 3);
    defaults.set(m("AlarmVolume"), 7);

    let scenario = Scenario {
        registry,
        schedule: Schedule {
            weekday: phone_weekday(&contexts),
            weekend: phone_weekend(&contexts),
        },
        contexts,
        policy,
        noise: OverrideNoise {
            rate_per_hour: 0.2,
            overridable: [m("RingerVolume"), m("MediaVolume"), m("ScreenBrightness")]
                .into_iter()
                .collect(),
        },
        action_ranges: settings.into_iter().collect(),
        defaults,
    };
    scenario.validate()?;
    Ok(scenario)
}

const HOME_ACTIVITIES: [(&str, &str); 5] = [
    ("sleep", "home"),
    ("away", "away"),
    ("sitting", "home"),
    ("cooking", "home"),
    ("exercise", "home"),
];

/// Activity symbol -> occupancy symbol for the smart-home preset.
pub fn smart_home_occupancy_map() -> BTreeMap<String, String> {
    HOME_ACTIVITIES
        .iter()
        .map(|(a, o)| (a.to_string(), o.to_string()))
        .collect()
}

fn smart_home_weekday(contexts: &[String]) -> DayProfile {
    let hours = (0..24)
        .map(|h| {
            let specs: Vec<RowSpec> = match h {
                0..=5 => vec![
                    ("sleep", STAY, &[("sitting", 1.0)] as &[_]),
                    ("sitting", 90.0, &[("sleep", 1.0)]),
                    ("away", 120.0, &[("sitting", 1.0)]),
                    ("cooking", 30.0, &[("sitting", 1.0)]),
                    ("exercise", 40.0, &[("sitting", 1.0)]),
                ],
                6..=7 => vec![
                    ("sleep", 35.0, &[("sitting", 0.7), ("exercise", 0.3)] as &[_]),
                    ("sitting", 45.0, &[("away", 0.6), ("cooking", 0.4)]),
                    ("exercise", 30.0, &[("sitting", 1.0)]),
                    ("cooking", 25.0, &[("sitting", 1.0)]),
                    ("away", 180.0, &[("sitting", 1.0)]),
                ],
                8 => vec![
                    ("sitting", 20.0, &[("away", 1.0)] as &[_]),
                    ("sleep", 20.0, &[("sitting", 1.0)]),
                    ("cooking", 20.0, &[("away", 1.0)]),
                    ("exercise", 20.0, &[("away", 1.0)]),
                    ("away", STAY, &[("sitting", 1.0)]),
                ],
                9..=16 => vec![
                    ("away", 5000.0, &[("sitting", 1.0)] as &[_]),
                    ("sitting", 180.0, &[("away", 0.6), ("cooking", 0.4)]),
                    ("sleep", 60.0, &[("sitting", 1.0)]),
                    ("cooking", 35.0, &[("sitting", 1.0)]),
                    ("exercise", 45.0, &[("sitting", 1.0)]),
                ],
                17..=18 => vec![
                    ("away", 50.0, &[("sitting", 0.6), ("cooking", 0.4)] as &[_]),
                    ("sitting", 120.0, &[("cooking", 0.7), ("exercise", 0.3)]),
                    ("cooking", 45.0, &[("sitting", 1.0)]),
                    ("exercise", 45.0, &[("sitting", 1.0)]),
                    ("sleep", 60.0, &[("sitting", 1.0)]),
                ],
                19..=21 => vec![
                    ("sitting", 240.0, &[("cooking", 0.3), ("exercise", 0.3), ("sleep", 0.4)] as &[_]),
                    ("cooking", 40.0, &[("sitting", 1.0)]),
                    ("exercise", 50.0, &[("sitting", 1.0)]),
                    ("away", 60.0, &[("sitting", 1.0)]),
                    ("sleep", STAY, &[("sitting", 1.0)]),
                ],
                _ => vec![
                    ("sitting", 40.0, &[("sleep", 1.0)] as &[_]),
                    ("cooking", 25.0, &[("sitting", 1.0)]),
                    ("exercise", 30.0, &[("sleep", 1.0)]),
                    ("away", 60.0, &[("sitting", 1.0)]),
                    ("sleep", STAY, &[("sitting", 1.0)]),
                ],
            };
            bucket(contexts, &specs)
        })
        .collect();
    DayProfile { hours }
}

fn smart_home_weekend(contexts: &[String]) -> DayProfile {
    let hours = (0..24)
        .map(|h| {
            let specs: Vec<RowSpec> = match h {
                0..=7 => vec![
                    ("sleep", STAY, &[("sitting", 1.0)] as &[_]),
                    ("sitting", 90.0, &[("sleep", 1.0)]),
                    ("away", 120.0, &[("sitting", 1.0)]),
                    ("cooking", 30.0, &[("sitting", 1.0)]),
                    ("exercise", 40.0, &[("sitting", 1.0)]),
                ],
                8..=9 => vec![
                    ("sleep", 45.0, &[("sitting", 0.8), ("cooking", 0.2)] as &[_]),
                    ("sitting", 120.0, &[("cooking", 0.6), ("exercise", 0.4)]),
                    ("cooking", 35.0, &[("sitting", 1.0)]),
                    ("exercise", 45.0, &[("sitting", 1.0)]),
                    ("away", 120.0, &[("sitting", 1.0)]),
                ],
                10..=18 => vec![
                    ("sitting", 300.0, &[("away", 0.4), ("cooking", 0.3), ("exercise", 0.3)] as &[_]),
                    ("away", 100.0, &[("sitting", 1.0)]),
                    ("cooking", 40.0, &[("sitting", 1.0)]),
                    ("exercise", 50.0, &[("sitting", 1.0)]),
                    ("sleep", 90.0, &[("sitting", 1.0)]),
                ],
                19..=21 => vec![
                    ("sitting", 200.0, &[("cooking", 0.4), ("sleep", 0.6)] as &[_]),
                    ("cooking", 40.0, &[("sitting", 1.0)]),
                    ("exercise", 45.0, &[("sitting", 1.0)]),
                    ("away", 60.0, &[("sitting", 1.0)]),
                    ("sleep", STAY, &[("sitting", 1.0)]),
                ],
                _ => vec![
                    ("sitting", 45.0, &[("sleep", 1.0)] as &[_]),
                    ("cooking", 25.0, &[("sitting", 1.0)]),
                    ("exercise", 30.0, &[("sleep", 1.0)]),
                    ("away", 60.0, &[("sitting", 1.0)]),
                    ("sleep", STAY, &[("sitting", 1.0)]),
                ],
            };
            bucket(contexts, &specs)
        })
        .collect();
    DayProfile { hours }
}

/// Smart-home scenario: one rule whose actions are the HVAC setpoint and the
/// (exogenous) house temperature; contexts are activity symbols. The house
/// temperature drifts as an override-driven random walk, no thermal physics.
pub fn build_smart_home_preset(seed: u64) -> Result<Scenario, ScenarioError> {
    let mut rng = ChaCha12Rng::seed_from_u64(mix(seed, 0x5A));
    let contexts: Vec<String> = HOME_ACTIVITIES.iter().map(|(a, _)| a.to_string()).collect();
    let setpoints = [
        ("sleep", 66u32),
        ("away", 60),
        ("sitting", 72),
        ("cooking", 75),
        ("exercise", 64),
    ];
    let mut policy = BTreeMap::new();
    for (ctx, sp) in setpoints {
        let jitter = rng.random_range(-1..=1i64);
        let mut partial = ActionVector::new();
        partial.set(m("Setpoint"), (sp as i64 + jitter).clamp(50, 90) as u32);
        policy.insert(ctx.to_string(), partial);
    }
    let registry = Registry::new(vec![AdaptationRule {
        rule_id: 0,
        contexts: vec![m("Activity")],
        actions: vec![m("Setpoint"), m("HouseTemp")],
    }])
    .expect("preset registry is valid");

    let mut defaults = ActionVector::new();
    defaults.set(m("Setpoint"), 70);
    defaults.set(m("HouseTemp"), 70);

    let scenario = Scenario {
        registry,
        schedule: Schedule {
            weekday: smart_home_weekday(&contexts),
            weekend: smart_home_weekend(&contexts),
        },
        contexts,
        policy,
        noise: OverrideNoise {
            rate_per_hour: 1.0,
            overridable: [m("HouseTemp")].into_iter().collect(),
        },
        action_ranges: [(m("Setpoint"), 90), (m("HouseTemp"), 100)]
            .into_iter()
            .collect(),
        defaults,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Deterministic two-context square wave with no override noise: context
/// `a` for hours 0-11, `b` for 12-23, two actions with distinct levels per
/// context. A perfect side channel, handy for identity checks.
pub fn build_square_wave_preset() -> Scenario {
    let contexts = vec!["a".to_string(), "b".to_string()];
    let hours: Vec<HourBucket> = (0..24)
        .map(|h| {
            let (a_dwell, b_dwell) = if h < 12 { (STAY, 1.0) } else { (1.0, STAY) };
            HourBucket {
                transitions: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
                dwell_mean: vec![a_dwell, b_dwell],
            }
        })
        .collect();
    let day = DayProfile { hours };
    let registry = Registry::new(vec![AdaptationRule {
        rule_id: 0,
        contexts: vec![m("Ctx")],
        actions: vec![m("X"), m("Y")],
    }])
    .expect("square wave registry is valid");
    let mut policy = BTreeMap::new();
    let mut pa = ActionVector::new();
    pa.set(m("X"), 1);
    pa.set(m("Y"), 5);
    policy.insert("a".to_string(), pa);
    let mut pb = ActionVector::new();
    pb.set(m("X"), 3);
    pb.set(m("Y"), 2);
    policy.insert("b".to_string(), pb);
    let mut defaults = ActionVector::new();
    defaults.set(m("X"), 0);
    defaults.set(m("Y"), 0);
    Scenario {
        registry,
        contexts,
        schedule: Schedule {
            weekday: day.clone(),
            weekend: day,
        },
        policy,
        noise: OverrideNoise {
            rate_per_hour: 0.0,
            overridable: BTreeSet::new(),
        },
        action_ranges: [(m("X"), 10), (m("Y"), 10)].into_iter().collect(),
        defaults,
    }
}

/// Drive the schedule minute by minute: a record per rule fires at every
/// context change (including t=0), override events nudge one overridable
/// action by one level, and the tick series tracks the merged vector.
pub fn simulate(sc: &Scenario, days: u64, seed: u64) -> Result<SimOutput, ScenarioError> {
    sc.validate()?;
    let horizon: Tick = days * TICKS_PER_DAY;
    let mut rng = ChaCha12Rng::seed_from_u64(mix(seed, 0x51));

    let action_names = sc.action_names();
    let col: BTreeMap<&MethodId, usize> = action_names
        .iter()
        .enumerate()
        .map(|(i, a)| (a, i))
        .collect();
    let initial = sc.initial_vector();

    let mut current_ctx = 0usize;
    let mut vec = initial.clone();
    let mut log = AdaptationLog::for_registry(&sc.registry);
    let mut overrides = Vec::new();
    let mut truth = Vec::with_capacity(horizon as usize);
    let mut action_truth = Vec::with_capacity(horizon as usize);

    let override_p = sc.noise.rate_per_hour / 60.0;
    let overridable: Vec<&MethodId> = sc.noise.overridable.iter().collect();

    let mut row: Vec<u32> = action_names
        .iter()
        .map(|a| vec.get(a).unwrap_or(0))
        .collect();

    let apply_profile =
        |ctx: usize, t: Tick, vec: &mut ActionVector, row: &mut Vec<u32>, log: &mut AdaptationLog| {
            if let Some(partial) = sc.policy.get(&sc.contexts[ctx]) {
                vec.merge(partial);
                for (a, lvl) in partial.iter() {
                    row[col[&a]] = lvl;
                }
            }
            for rule in sc.registry.rules() {
                log.record(AdaptationRecord {
                    t,
                    rule_id: rule.rule_id,
                    context: sc.contexts[ctx].clone(),
                    actions: vec.project(&rule.action_set()),
                })
                .expect("simulator emits valid records");
            }
        };

    for t in 0..horizon {
        let mut adapted = false;
        if t == 0 {
            apply_profile(current_ctx, 0, &mut vec, &mut row, &mut log);
            adapted = true;
        } else {
            let day = t / TICKS_PER_DAY;
            let weekday = day % 7 < 5;
            let hour = ((t % TICKS_PER_DAY) / 60) as usize;
            let day_profile = if weekday {
                &sc.schedule.weekday
            } else {
                &sc.schedule.weekend
            };
            let bucket = &day_profile.hours[hour];
            let hazard = (1.0 / bucket.dwell_mean[current_ctx]).min(1.0);
            if rng.random::<f64>() < hazard {
                let next = sample_row(&mut rng, &bucket.transitions[current_ctx]);
                if next != current_ctx {
                    current_ctx = next;
                    apply_profile(current_ctx, t, &mut vec, &mut row, &mut log);
                    adapted = true;
                }
            }
        }
        if !adapted && override_p > 0.0 && !overridable.is_empty() && rng.random::<f64>() < override_p
        {
            let action = overridable[rng.random_range(0..overridable.len())];
            let max = sc.action_ranges[action];
            let level = vec.get(action).unwrap_or(0);
            let level = if rng.random::<f64>() < 0.5 {
                level.saturating_sub(1)
            } else {
                (level + 1).min(max)
            };
            vec.set(action.clone(), level);
            row[col[action]] = level;
            overrides.push(OverrideEvent {
                t,
                action: action.clone(),
                level,
            });
        }
        truth.push(sc.contexts[current_ctx].clone());
        action_truth.push(row.clone());
    }

    Ok(SimOutput {
        series: TickSeries {
            truth,
            action_names,
            action_truth,
        },
        log: log.into_records(),
        overrides,
    })
}

fn sample_row<R: Rng>(rng: &mut R, row: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Expected context occupancy over a horizon, by exact forward propagation
/// of the per-minute chain. Independent of the sampling path in `simulate`.
pub fn expected_occupancy(sc: &Scenario, days: u64) -> Vec<f64> {
    let k = sc.contexts.len();
    let mut p = vec![0.0; k];
    p[0] = 1.0;
    let mut acc = vec![0.0; k];
    let horizon = days * TICKS_PER_DAY;
    for t in 0..horizon {
        if t > 0 {
            let day = t / TICKS_PER_DAY;
            let weekday = day % 7 < 5;
            let hour = ((t % TICKS_PER_DAY) / 60) as usize;
            let day_profile = if weekday {
                &sc.schedule.weekday
            } else {
                &sc.schedule.weekend
            };
            let bucket = &day_profile.hours[hour];
            let mut next = vec![0.0; k];
            for from in 0..k {
                let hazard = (1.0 / bucket.dwell_mean[from]).min(1.0);
                let stay = p[from] * (1.0 - hazard);
                next[from] += stay;
                for (to, &pt) in bucket.transitions[from].iter().enumerate() {
                    next[to] += p[from] * hazard * pt;
                }
            }
            p = next;
        }
        for (a, &pi) in acc.iter_mut().zip(&p) {
            *a += pi;
        }
    }
    for a in acc.iter_mut() {
        *a /= horizon as f64;
    }
    acc
}
