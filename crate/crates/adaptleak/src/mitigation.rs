//! Mediation of observer reads of protected actions: delay, suppression,
//! row-masking, and feature-masking, plus the controller that escalates
//! magnitude and switches method while the side channel stays too wide.
//!
//! Delay shifts which adaptation interval a read resolves to; the second
//! regime then decides, once per interval, what that interval serves. All
//! coin flips and picks are pure functions of (seed, interval index, action
//! index), so replays are exact.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::infodetect::{normalized_mi, JointHistogram};
use crate::registry::MethodId;
use crate::seed::mix;
use crate::trace::{ActionVector, AdaptationRecord, ObservationLog, Tick, TickSeries};

const SALT_SUPPRESS: u64 = 0x10;
const SALT_ROW: u64 = 0x20;
const SALT_FEATURE: u64 = 0x30;
const SALT_DELAY: u64 = 0x40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MitigationError {
    #[error("`{0}` is not an action of this mediation state")]
    UnknownAction(MethodId),
    #[error("mitigation ladder exhausted and channel still above threshold")]
    LadderExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MitigationMethod {
    None,
    Delay { d: Tick },
    Suppression { k: usize },
    RowMask { p: f64 },
    FeatureMask { p: f64 },
}

/// Second-regime stage; delay runs underneath whichever of these is active.
#[derive(Debug, Clone, Copy, PartialEq)]
enum SecondStage {
    None,
    Suppression(usize),
    RowMask(f64),
    FeatureMask(f64),
}

impl SecondStage {
    fn name(&self) -> &'static str {
        match self {
            SecondStage::None => "none",
            SecondStage::Suppression(_) => "suppression",
            SecondStage::RowMask(_) => "row_mask",
            SecondStage::FeatureMask(_) => "feature_mask",
        }
    }

    fn magnitude(&self) -> f64 {
        match self {
            SecondStage::None => 0.0,
            SecondStage::Suppression(k) => *k as f64,
            SecondStage::RowMask(p) | SecondStage::FeatureMask(p) => *p,
        }
    }
}

/// Escalation schedule: magnitudes within a method, then the switch order
/// Suppression -> RowMask -> FeatureMask. Delay stays active throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    #[serde(default = "default_suppression_ks")]
    pub suppression_ks: Vec<usize>,
    #[serde(default = "default_mask_ps")]
    pub mask_ps: Vec<f64>,
    /// Ticks between controller evaluations.
    #[serde(default = "default_window")]
    pub window: Tick,
    /// Delay drawn uniformly from this inclusive range at activation.
    #[serde(default = "default_delay_range")]
    pub delay_range: (Tick, Tick),
}

fn default_suppression_ks() -> Vec<usize> {
    vec![2, 3, 5, 8]
}

fn default_mask_ps() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8]
}

fn default_window() -> Tick {
    1440
}

fn default_delay_range() -> (Tick, Tick) {
    (15, 120)
}

impl Default for Ladder {
    fn default() -> Self {
        Ladder {
            suppression_ks: default_suppression_ks(),
            mask_ps: default_mask_ps(),
            window: default_window(),
            delay_range: default_delay_range(),
        }
    }
}

impl Ladder {
    fn first_stage(&self) -> Option<SecondStage> {
        if let Some(&k) = self.suppression_ks.first() {
            Some(SecondStage::Suppression(k))
        } else if let Some(&p) = self.mask_ps.first() {
            Some(SecondStage::RowMask(p))
        } else {
            None
        }
    }

    /// Next rung after the given stage: a bigger magnitude of the same
    /// method when one exists, otherwise the next method at its lowest.
    fn next_after(&self, stage: &SecondStage) -> Option<SecondStage> {
        match stage {
            SecondStage::None => self.first_stage(),
            SecondStage::Suppression(k) => self
                .suppression_ks
                .iter()
                .find(|&&n| n > *k)
                .map(|&n| SecondStage::Suppression(n))
                .or_else(|| self.mask_ps.first().map(|&p| SecondStage::RowMask(p))),
            SecondStage::RowMask(p) => self
                .mask_ps
                .iter()
                .find(|&&n| n > *p)
                .map(|&n| SecondStage::RowMask(n))
                .or_else(|| self.mask_ps.first().map(|&p| SecondStage::FeatureMask(p))),
            SecondStage::FeatureMask(p) => self
                .mask_ps
                .iter()
                .find(|&&n| n > *p)
                .map(|&n| SecondStage::FeatureMask(n)),
        }
    }
}

/// One interval's cached mitigation decision. Values are resolved per read
/// so that manual setting changes stay visible through unmasked intervals.
#[derive(Debug, Clone, PartialEq)]
enum IntervalDecision {
    Clear,
    /// Serve the values of this history record for the whole interval.
    Suppressed(usize),
    RowMasked,
    /// Per-action mask flags, aligned to the rule's sorted action order.
    FeatureMasked(Vec<bool>),
}

/// Per (observer, rule) mediation pipeline.
#[derive(Debug, Clone)]
pub struct MitigationState {
    pub observer: String,
    pub rule_id: usize,
    delay: Tick,
    stage: SecondStage,
    seed: u64,
    initial: ActionVector,
    /// Rule actions in sorted order; mask flags align to this.
    action_order: Vec<MethodId>,
    /// Adaptation history; interval i starts at event i-1 (interval 0 is
    /// the pre-history span served from `initial`).
    events: Vec<(Tick, ActionVector)>,
    cache: Option<(usize, IntervalDecision)>,
}

impl MitigationState {
    /// A fixed single-method pipeline.
    pub fn with_method(
        observer: &str,
        rule_id: usize,
        method: MitigationMethod,
        initial: ActionVector,
        seed: u64,
    ) -> Self {
        let (delay, stage) = match method {
            MitigationMethod::None => (0, SecondStage::None),
            MitigationMethod::Delay { d } => (d, SecondStage::None),
            MitigationMethod::Suppression { k } => (0, SecondStage::Suppression(k.max(1))),
            MitigationMethod::RowMask { p } => (0, SecondStage::RowMask(p)),
            MitigationMethod::FeatureMask { p } => (0, SecondStage::FeatureMask(p)),
        };
        MitigationState {
            observer: observer.to_string(),
            rule_id,
            delay,
            stage,
            seed,
            action_order: initial.keys().cloned().collect(),
            initial,
            events: Vec::new(),
            cache: None,
        }
    }

    /// Controller-driven pipeline: delay drawn from the ladder's range plus
    /// the ladder's first second-regime rung.
    pub fn activated(
        observer: &str,
        rule_id: usize,
        ladder: &Ladder,
        initial: ActionVector,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(mix(seed, SALT_DELAY));
        let (lo, hi) = ladder.delay_range;
        let delay = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let stage = ladder.first_stage().unwrap_or(SecondStage::None);
        MitigationState {
            observer: observer.to_string(),
            rule_id,
            delay,
            stage,
            seed,
            action_order: initial.keys().cloned().collect(),
            initial,
            events: Vec::new(),
            cache: None,
        }
    }

    pub fn delay(&self) -> Tick {
        self.delay
    }

    pub fn method_name(&self) -> String {
        if self.delay > 0 && !matches!(self.stage, SecondStage::None) {
            format!("delay+{}", self.stage.name())
        } else if self.delay > 0 {
            "delay".to_string()
        } else {
            self.stage.name().to_string()
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.stage.magnitude()
    }

    /// Record one adaptation of this state's rule. Masks and suppression
    /// picks attach to the interval this event opens; earlier intervals keep
    /// their decisions.
    pub fn on_adaptation_event(&mut self, rec: &AdaptationRecord) {
        debug_assert!(self.events.last().is_none_or(|(t, _)| rec.t >= *t));
        self.events.push((rec.t, rec.actions.clone()));
    }

    fn set_stage(&mut self, stage: SecondStage) {
        self.stage = stage;
        self.cache = None;
    }

    /// Serve one getter read: the true series value at `t - d`, replaced by
    /// this interval's suppression pick or masked to 0. Reads whose shifted
    /// time precedes the simulation see the initial vector.
    pub fn serve(
        &mut self,
        series: &TickSeries,
        action: &MethodId,
        t: Tick,
    ) -> Result<u32, MitigationError> {
        let pos = self
            .action_order
            .binary_search(action)
            .map_err(|_| MitigationError::UnknownAction(action.clone()))?;
        let pre_start = t < self.delay;
        let shifted = t - if pre_start { t } else { self.delay };
        let idx = if pre_start {
            0
        } else {
            self.events.partition_point(|(et, _)| *et <= shifted)
        };
        if self.cache.as_ref().map(|(i, _)| *i) != Some(idx) {
            let decision = self.decide(idx);
            self.cache = Some((idx, decision));
        }
        let clear = |state: &Self| -> Result<u32, MitigationError> {
            if pre_start {
                Ok(state.initial.get(action).expect("pos checked"))
            } else {
                let col = series
                    .column_of(action)
                    .ok_or_else(|| MitigationError::UnknownAction(action.clone()))?;
                Ok(series.level_at(shifted, col))
            }
        };
        match &self.cache.as_ref().unwrap().1 {
            IntervalDecision::Clear => clear(self),
            IntervalDecision::RowMasked => Ok(0),
            IntervalDecision::FeatureMasked(masked) => {
                if masked[pos] {
                    Ok(0)
                } else {
                    clear(self)
                }
            }
            IntervalDecision::Suppressed(pick) => Ok(self.events[*pick]
                .1
                .get(action)
                .expect("records carry the rule's action set")),
        }
    }

    /// This interval's decision: a pure function of (seed, interval, stage).
    fn decide(&self, idx: usize) -> IntervalDecision {
        match self.stage {
            SecondStage::None => IntervalDecision::Clear,
            SecondStage::Suppression(k) => {
                if idx == 0 {
                    IntervalDecision::Clear
                } else {
                    let lo = idx.saturating_sub(k.max(1));
                    let mut rng = decision_rng(self.seed, idx as u64, SALT_SUPPRESS);
                    let pick = lo + rng.random_range(0..idx - lo);
                    if pick == idx - 1 {
                        // the newest record is what an honest read sees
                        IntervalDecision::Clear
                    } else {
                        IntervalDecision::Suppressed(pick)
                    }
                }
            }
            SecondStage::RowMask(p) => {
                let mut rng = decision_rng(self.seed, idx as u64, SALT_ROW);
                if rng.random::<f64>() < p {
                    IntervalDecision::RowMasked
                } else {
                    IntervalDecision::Clear
                }
            }
            SecondStage::FeatureMask(p) => {
                let mut rng = decision_rng(self.seed, idx as u64, SALT_FEATURE);
                IntervalDecision::FeatureMasked(
                    self.action_order
                        .iter()
                        .map(|_| rng.random::<f64>() < p)
                        .collect(),
                )
            }
        }
    }
}

fn decision_rng(seed: u64, interval: u64, salt: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix(mix(seed, interval), salt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerOutcome {
    /// Channel at or under threshold: no change.
    Held,
    /// Same method, bigger magnitude.
    Escalated,
    /// Moved to the next method in the switch order.
    Switched,
}

/// One controller evaluation for a flagged observer: escalate while the
/// effective score stays above the threshold. The state is held at its
/// maximum when the ladder runs out.
pub fn controller_step(
    state: &mut MitigationState,
    ladder: &Ladder,
    effective: f64,
    threshold: f64,
) -> Result<ControllerOutcome, MitigationError> {
    if effective <= threshold {
        return Ok(ControllerOutcome::Held);
    }
    match ladder.next_after(&state.stage) {
        Some(next) => {
            let switched = next.name() != state.stage.name();
            state.set_stage(next);
            Ok(if switched {
                ControllerOutcome::Switched
            } else {
                ControllerOutcome::Escalated
            })
        }
        None => Err(MitigationError::LadderExhausted),
    }
}

/// Normalized MI between the true context and what the observer was
/// actually served, per-tick sampling.
pub fn effective_mi(observer_log: &ObservationLog, truth: &TickSeries) -> f64 {
    assert_eq!(
        observer_log.rows.len(),
        truth.truth.len(),
        "observation log must cover the truth horizon"
    );
    let mut joint = JointHistogram::new();
    for (ctx, row) in truth.truth.iter().zip(&observer_log.rows) {
        joint.observe(ctx, row);
    }
    normalized_mi(&joint)
}

/// Routes observer reads: flagged observers go through their mediation
/// state, everyone else (including the adaptation owner) reads the truth.
#[derive(Debug, Default)]
pub struct Mediator {
    states: BTreeMap<(String, usize), MitigationState>,
}

impl Mediator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn flag(&mut self, state: MitigationState) {
        self.states
            .insert((state.observer.clone(), state.rule_id), state);
    }

    pub fn is_flagged(&self, observer: &str, rule_id: usize) -> bool {
        self.states.contains_key(&(observer.to_string(), rule_id))
    }

    pub fn state_mut(&mut self, observer: &str, rule_id: usize) -> Option<&mut MitigationState> {
        self.states.get_mut(&(observer.to_string(), rule_id))
    }

    pub fn on_adaptation(&mut self, rec: &AdaptationRecord) {
        for ((_, rule_id), state) in self.states.iter_mut() {
            if *rule_id == rec.rule_id {
                state.on_adaptation_event(rec);
            }
        }
    }

    pub fn get(
        &mut self,
        series: &TickSeries,
        observer: &str,
        rule_id: usize,
        action: &MethodId,
        t: Tick,
    ) -> Result<u32, MitigationError> {
        if let Some(state) = self.states.get_mut(&(observer.to_string(), rule_id)) {
            state.serve(series, action, t)
        } else {
            let col = series
                .column_of(action)
                .ok_or_else(|| MitigationError::UnknownAction(action.clone()))?;
            Ok(series.level_at(t, col))
        }
    }
}

/// Mitigation audit line: `serve` marks an interval decision, `escalate`,
/// `switch`, and `exhausted` mark controller outcomes.
#[derive(Debug, Clone, Serialize)]
pub struct AuditEvent {
    pub t: Tick,
    pub observer: String,
    pub method: String,
    pub magnitude: f64,
    pub event: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::tick_expand;

    fn m(s: &str) -> MethodId {
        MethodId::new(s).unwrap()
    }

    fn vector(x: u32, y: u32) -> ActionVector {
        [(m("X"), x), (m("Y"), y)].into_iter().collect()
    }

    fn rec(t: Tick, x: u32, y: u32) -> AdaptationRecord {
        AdaptationRecord {
            t,
            rule_id: 0,
            context: "c".into(),
            actions: vector(x, y),
        }
    }

    const EVENTS: [(Tick, u32); 4] = [(0, 4), (25, 7), (60, 2), (90, 9)];
    const HORIZON: Tick = 120;

    fn history() -> (Vec<AdaptationRecord>, TickSeries) {
        let records: Vec<AdaptationRecord> = EVENTS.iter().map(|&(t, x)| rec(t, x, 1)).collect();
        let series = tick_expand(&records, HORIZON, ("c", &vector(0, 0))).unwrap();
        (records, series)
    }

    fn state_with(method: MitigationMethod, seed: u64, records: &[AdaptationRecord]) -> MitigationState {
        let mut state = MitigationState::with_method("spy", 0, method, vector(0, 0), seed);
        for r in records {
            state.on_adaptation_event(r);
        }
        state
    }

    fn served_series(
        state: &mut MitigationState,
        series: &TickSeries,
        action: &str,
        horizon: Tick,
    ) -> Vec<u32> {
        (0..horizon)
            .map(|t| state.serve(series, &m(action), t).unwrap())
            .collect()
    }

    fn truth_column(series: &TickSeries, action: &str) -> Vec<u32> {
        let col = series.column_of(&m(action)).unwrap();
        (0..series.horizon()).map(|t| series.level_at(t, col)).collect()
    }

    #[test]
    fn identity_methods_serve_truth_bit_for_bit() {
        let (records, series) = history();
        let truth = truth_column(&series, "X");
        for method in [
            MitigationMethod::None,
            MitigationMethod::Delay { d: 0 },
            MitigationMethod::Suppression { k: 1 },
            MitigationMethod::RowMask { p: 0.0 },
            MitigationMethod::FeatureMask { p: 0.0 },
        ] {
            let mut state = state_with(method, 9, &records);
            assert_eq!(served_series(&mut state, &series, "X", HORIZON), truth, "{method:?}");
        }
    }

    #[test]
    fn delay_shifts_the_truth_series() {
        let (records, series) = history();
        let truth = truth_column(&series, "X");
        let mut state = state_with(MitigationMethod::Delay { d: 30 }, 9, &records);
        let served = served_series(&mut state, &series, "X", HORIZON);
        for t in 0..HORIZON as usize {
            let expected = if t < 30 { 0 } else { truth[t - 30] };
            assert_eq!(served[t], expected, "t={t}");
        }
    }

    #[test]
    fn reads_before_history_serve_initial_vector() {
        let records = vec![rec(40, 8, 8)];
        let series = tick_expand(&records, HORIZON, ("c", &vector(3, 3))).unwrap();
        let mut state = MitigationState::with_method(
            "spy",
            0,
            MitigationMethod::Delay { d: 50 },
            vector(3, 3),
            9,
        );
        state.on_adaptation_event(&records[0]);
        // t - d < 0: the initial vector
        assert_eq!(state.serve(&series, &m("X"), 10).unwrap(), 3);
        // shifted time 10 precedes the first record: still the initial value
        assert_eq!(state.serve(&series, &m("X"), 60).unwrap(), 3);
        // shifted time 40 sees the record
        assert_eq!(state.serve(&series, &m("X"), 90).unwrap(), 8);
    }

    #[test]
    fn unknown_action_rejected() {
        let (records, series) = history();
        let mut state = state_with(MitigationMethod::None, 9, &records);
        assert!(matches!(
            state.serve(&series, &m("Z"), 5),
            Err(MitigationError::UnknownAction(_))
        ));
    }

    #[test]
    fn feature_mask_one_masks_every_read() {
        let (records, series) = history();
        let mut state = state_with(MitigationMethod::FeatureMask { p: 1.0 }, 9, &records);
        assert!(served_series(&mut state, &series, "X", HORIZON).iter().all(|&v| v == 0));
        assert!(served_series(&mut state, &series, "Y", HORIZON).iter().all(|&v| v == 0));
    }

    #[test]
    fn row_mask_zero_never_masks() {
        let (records, series) = history();
        let truth = truth_column(&series, "X");
        let mut state = state_with(MitigationMethod::RowMask { p: 0.0 }, 123, &records);
        assert_eq!(served_series(&mut state, &series, "X", HORIZON), truth);
    }

    #[test]
    fn row_mask_hides_whole_rows() {
        // with p=0.5 some intervals must mask both actions together
        let (records, series) = history();
        let mut state = state_with(MitigationMethod::RowMask { p: 0.5 }, 7, &records);
        let xs = served_series(&mut state, &series, "X", HORIZON);
        let ys = served_series(&mut state, &series, "Y", HORIZON);
        let mut masked = 0;
        for t in 1..HORIZON as usize {
            if xs[t] == 0 {
                assert_eq!(ys[t], 0, "row mask must cover all actions at t={t}");
                masked += 1;
            }
        }
        assert!(masked > 0);
    }

    #[test]
    fn masked_reads_keep_live_values_when_unmasked() {
        // an override-style mid-interval change stays visible through an
        // unmasked interval
        let records = vec![rec(0, 4, 1)];
        let mut series = tick_expand(&records, 60, ("c", &vector(0, 0))).unwrap();
        let col = series.column_of(&m("X")).unwrap();
        for t in 30..60 {
            series.action_truth[t][col] = 5; // manual nudge at t=30
        }
        let mut state = MitigationState::with_method(
            "spy",
            0,
            MitigationMethod::RowMask { p: 0.0 },
            vector(0, 0),
            3,
        );
        state.on_adaptation_event(&records[0]);
        assert_eq!(state.serve(&series, &m("X"), 29).unwrap(), 4);
        assert_eq!(state.serve(&series, &m("X"), 30).unwrap(), 5);
    }

    #[test]
    fn suppression_serves_one_of_latest_k_uniformly() {
        // known 5-record history with distinct values; query the last interval
        let history: Vec<AdaptationRecord> =
            [(0, 1), (10, 2), (20, 3), (30, 4), (40, 5)]
                .iter()
                .map(|&(t, x)| rec(t, x, 0))
                .collect();
        let series = tick_expand(&history, 60, ("c", &vector(0, 0))).unwrap();
        let mut counts = [0u64; 3]; // picks among values 3, 4, 5
        let trials = 10_000;
        for seed in 0..trials {
            let mut state =
                MitigationState::with_method("spy", 0, MitigationMethod::Suppression { k: 3 }, vector(0, 0), seed);
            for r in &history {
                state.on_adaptation_event(r);
            }
            let got = state.serve(&series, &m("X"), 45).unwrap();
            assert!((3..=5).contains(&got), "served {got}");
            counts[(got - 3) as usize] += 1;
        }
        // chi-squared against uniform, 2 dof: p > 0.01 means stat < 9.2103
        let expected = trials as f64 / 3.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(stat < 9.2103, "chi-squared {stat}, counts {counts:?}");
    }

    #[test]
    fn decisions_replay_exactly() {
        let (records, series) = history();
        let a = served_series(
            &mut state_with(MitigationMethod::FeatureMask { p: 0.5 }, 42, &records),
            &series,
            "X",
            HORIZON,
        );
        let b = served_series(
            &mut state_with(MitigationMethod::FeatureMask { p: 0.5 }, 42, &records),
            &series,
            "X",
            HORIZON,
        );
        assert_eq!(a, b);
    }

    #[test]
    fn masks_and_picks_are_interval_scoped() {
        let (records, series) = history();
        let mut state = state_with(MitigationMethod::RowMask { p: 0.5 }, 11, &records);
        let xs = served_series(&mut state, &series, "X", HORIZON);
        // within each interval the served value is constant
        let boundaries = [0u64, 25, 60, 90, HORIZON];
        for w in boundaries.windows(2) {
            let span = &xs[w[0] as usize..w[1] as usize];
            assert!(span.iter().all(|v| v == &span[0]));
        }
    }

    #[test]
    fn controller_escalates_switches_and_holds() {
        let ladder = Ladder::default();
        let mut state = MitigationState::activated("spy", 0, &ladder, vector(0, 0), 5);
        assert_eq!(state.method_name(), "delay+suppression");
        assert!((15..=120).contains(&state.delay()));
        assert_eq!(state.magnitude(), 2.0);

        // hold below threshold
        assert_eq!(
            controller_step(&mut state, &ladder, 0.3, 0.65).unwrap(),
            ControllerOutcome::Held
        );
        assert_eq!(state.magnitude(), 2.0);

        // k: 2 -> 3 -> 5 -> 8
        for expect in [3.0, 5.0, 8.0] {
            assert_eq!(
                controller_step(&mut state, &ladder, 0.9, 0.65).unwrap(),
                ControllerOutcome::Escalated
            );
            assert_eq!(state.magnitude(), expect);
        }
        // exhausted suppression: switch to row mask at lowest magnitude
        assert_eq!(
            controller_step(&mut state, &ladder, 0.9, 0.65).unwrap(),
            ControllerOutcome::Switched
        );
        assert_eq!(state.method_name(), "delay+row_mask");
        assert_eq!(state.magnitude(), 0.2);

        for expect in [0.4, 0.6, 0.8] {
            controller_step(&mut state, &ladder, 0.9, 0.65).unwrap();
            assert_eq!(state.magnitude(), expect);
        }
        assert_eq!(
            controller_step(&mut state, &ladder, 0.9, 0.65).unwrap(),
            ControllerOutcome::Switched
        );
        assert_eq!(state.method_name(), "delay+feature_mask");
        for expect in [0.4, 0.6, 0.8] {
            controller_step(&mut state, &ladder, 0.9, 0.65).unwrap();
            assert_eq!(state.magnitude(), expect);
        }
        // everything maxed and still above threshold
        assert!(matches!(
            controller_step(&mut state, &ladder, 0.9, 0.65),
            Err(MitigationError::LadderExhausted)
        ));
        assert_eq!(state.magnitude(), 0.8); // held at maximum
        // delay persisted across every switch
        assert!(state.delay() > 0);
    }

    #[test]
    fn scope_isolation_non_flagged_reads_truth() {
        use crate::scenario::{build_square_wave_preset, simulate};
        let sc = build_square_wave_preset();
        let out = simulate(&sc, 2, 3).unwrap();
        let mut mediator = Mediator::new();
        let mut state = MitigationState::with_method(
            "evil",
            0,
            MitigationMethod::FeatureMask { p: 1.0 },
            sc.initial_vector(),
            8,
        );
        for recd in &out.log {
            state.on_adaptation_event(recd);
        }
        mediator.flag(state);
        let x = m("X");
        let col = out.series.column_of(&x).unwrap();
        for t in 0..out.series.horizon() {
            let honest = mediator.get(&out.series, "good", 0, &x, t).unwrap();
            assert_eq!(honest, out.series.level_at(t, col));
            let spied = mediator.get(&out.series, "evil", 0, &x, t).unwrap();
            assert_eq!(spied, 0);
        }
    }

    #[test]
    fn effective_mi_endpoints() {
        use crate::scenario::{build_square_wave_preset, simulate};
        use crate::trace::ObservationLog;
        let sc = build_square_wave_preset();
        let out = simulate(&sc, 4, 5).unwrap();
        let actions = out.series.action_names.clone();

        // unmitigated perfect channel
        let clear = ObservationLog::from_series(&out.series, &actions, "spy");
        assert!((effective_mi(&clear, &out.series) - 1.0).abs() < 1e-9);

        // fully masked
        let mut state = MitigationState::with_method(
            "spy",
            0,
            MitigationMethod::FeatureMask { p: 1.0 },
            sc.initial_vector(),
            2,
        );
        for recd in &out.log {
            state.on_adaptation_event(recd);
        }
        let rows: Vec<Vec<u32>> = (0..out.series.horizon())
            .map(|t| {
                actions
                    .iter()
                    .map(|a| state.serve(&out.series, a, t).unwrap())
                    .collect()
            })
            .collect();
        let masked = ObservationLog {
            observer: "spy".into(),
            actions: actions.clone(),
            rows,
        };
        assert_eq!(effective_mi(&masked, &out.series), 0.0);
    }

    #[test]
    fn row_mask_reduces_effective_mi_on_average() {
        use crate::scenario::{build_square_wave_preset, simulate};
        let sc = build_square_wave_preset();
        let mut total = 0.0;
        for seed in 0..10u64 {
            let out = simulate(&sc, 4, seed).unwrap();
            let actions = out.series.action_names.clone();
            let mut state = MitigationState::with_method(
                "spy",
                0,
                MitigationMethod::RowMask { p: 0.4 },
                sc.initial_vector(),
                seed,
            );
            for recd in &out.log {
                state.on_adaptation_event(recd);
            }
            let rows: Vec<Vec<u32>> = (0..out.series.horizon())
                .map(|t| {
                    actions
                        .iter()
                        .map(|a| state.serve(&out.series, a, t).unwrap())
                        .collect()
                })
                .collect();
            let log = ObservationLog {
                observer: "spy".into(),
                actions,
                rows,
            };
            total += effective_mi(&log, &out.series);
        }
        assert!(total / 10.0 < 1.0 - 1e-6);
    }

    #[test]
    fn delay_alone_preserves_realigned_mi() {
        use crate::scenario::{build_square_wave_preset, simulate};
        let sc = build_square_wave_preset();
        let out = simulate(&sc, 4, 5).unwrap();
        let actions = out.series.action_names.clone();
        let d: Tick = 45;
        let mut state = MitigationState::with_method(
            "spy",
            0,
            MitigationMethod::Delay { d },
            sc.initial_vector(),
            2,
        );
        for recd in &out.log {
            state.on_adaptation_event(recd);
        }
        let horizon = out.series.horizon();
        // the attacker realigns by shifting its log d ticks back
        let realigned_rows: Vec<Vec<u32>> = (d..horizon)
            .map(|t| {
                actions
                    .iter()
                    .map(|a| state.serve(&out.series, a, t).unwrap())
                    .collect()
            })
            .collect();
        let realigned = ObservationLog {
            observer: "spy".into(),
            actions: actions.clone(),
            rows: realigned_rows,
        };
        let window = out.series.slice(0, horizon - d);
        let clear = ObservationLog::from_series(&window, &actions, "spy");
        assert_eq!(
            effective_mi(&realigned, &window),
            effective_mi(&clear, &window)
        );
    }
}
