//! Information-based detection: plug-in mutual information between context
//! and action subsets, per-observer suspicion scores, alarm classification,
//! and FP/FN threshold sweeps.
//!
//! All estimates are maximum-likelihood (plug-in) in base 2, sampled per
//! tick so that dwell time weighs in. Scores are normalized by the context
//! entropy, so a score of 1 means the queried actions pin the context down
//! completely.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{MethodId, MiTables, MAX_ACTIONS_PER_RULE};
use crate::trace::{Tick, TickSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("histogram has no samples")]
    EmptyHistogram,
    #[error("`{action}` is not a protected getter of rule {rule_id}")]
    NotAProtectedGetter { rule_id: usize, action: MethodId },
    #[error("degenerate population: {0}")]
    DegeneratePopulation(String),
}

/// Shannon entropy in bits of a probability vector.
pub fn entropy(dist: &[f64]) -> Result<f64, DetectError> {
    let mut sum = 0.0;
    for &p in dist {
        if p < 0.0 || !p.is_finite() {
            return Err(DetectError::NotADistribution(format!("entry {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DetectError::NotADistribution(format!("sums to {sum}")));
    }
    Ok(dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum())
}

/// Empirical joint counts over (context symbol, action-level tuple).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JointHistogram {
    counts: BTreeMap<(String, Vec<u32>), u64>,
    n: u64,
}

impl JointHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, context: &str, levels: &[u32]) {
        self.observe_weighted(context, levels, 1);
    }

    pub fn observe_weighted(&mut self, context: &str, levels: &[u32], weight: u64) {
        *self
            .counts
            .entry((context.to_string(), levels.to_vec()))
            .or_insert(0) += weight;
        self.n += weight;
    }

    /// One sample per tick of (context, selected action columns).
    pub fn from_series(series: &TickSeries, cols: &[usize]) -> Self {
        let mut h = JointHistogram::new();
        for (ctx, row) in series.truth.iter().zip(&series.action_truth) {
            let levels: Vec<u32> = cols.iter().map(|&c| row[c]).collect();
            h.observe(ctx, &levels);
        }
        h
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    fn marginals(&self) -> (BTreeMap<&str, u64>, BTreeMap<&[u32], u64>) {
        let mut ctx: BTreeMap<&str, u64> = BTreeMap::new();
        let mut act: BTreeMap<&[u32], u64> = BTreeMap::new();
        for ((c, a), &w) in &self.counts {
            *ctx.entry(c).or_insert(0) += w;
            *act.entry(a.as_slice()).or_insert(0) += w;
        }
        (ctx, act)
    }

    /// Entropy of the empirical context marginal, in bits.
    pub fn context_entropy(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let (ctx, _) = self.marginals();
        let n = self.n as f64;
        ctx.values()
            .map(|&w| {
                let p = w as f64 / n;
                -p * p.log2()
            })
            .sum()
    }

    /// Entropy of the empirical action-tuple marginal, in bits.
    pub fn action_entropy(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let (_, act) = self.marginals();
        let n = self.n as f64;
        act.values()
            .map(|&w| {
                let p = w as f64 / n;
                -p * p.log2()
            })
            .sum()
    }
}

/// Plug-in mutual information estimate in bits.
pub fn mutual_information(joint: &JointHistogram) -> Result<f64, DetectError> {
    if joint.n == 0 {
        return Err(DetectError::EmptyHistogram);
    }
    let n = joint.n as f64;
    let (ctx, act) = joint.marginals();
    let mut mi = 0.0;
    for ((c, a), &w) in &joint.counts {
        if w == 0 {
            continue;
        }
        let p = w as f64 / n;
        let pc = ctx[c.as_str()] as f64 / n;
        let pa = act[a.as_slice()] as f64 / n;
        mi += p * (p / (pc * pa)).log2();
    }
    Ok(mi)
}

/// `I(C;A) / H(C)`, in `[0, 1]`; 0 when the context marginal is degenerate
/// or the histogram is empty.
pub fn normalized_mi(joint: &JointHistogram) -> f64 {
    if joint.n == 0 {
        return 0.0;
    }
    let hc = joint.context_entropy();
    if hc <= 0.0 {
        return 0.0;
    }
    let mi = mutual_information(joint).expect("non-empty histogram");
    (mi / hc).clamp(0.0, 1.0)
}

/// Recompute every subset entry of every rule table from per-tick samples.
///
/// Actions missing from the series are treated as constant level 0.
pub fn update_mi_tables(tables: &mut MiTables, series: &TickSeries) {
    for table in &mut tables.rules {
        let cols: Vec<Option<usize>> = table
            .actions
            .iter()
            .map(|a| series.column_of(a))
            .collect();
        let rows = dedup_rows(series, &cols);
        let n: u64 = rows.iter().map(|r| r.weight).sum();
        if n == 0 {
            continue;
        }
        let hc = context_entropy_of(&rows, n);
        let n_actions = table.actions.len();
        let mut scratch: Vec<ProjKey> = Vec::with_capacity(rows.len());
        for mask in 1u32..=((1u64 << n_actions) - 1) as u32 {
            let sel: Vec<usize> = (0..n_actions).filter(|i| mask & (1 << i) != 0).collect();
            let value = masked_nmi(&rows, n, hc, &sel, &mut scratch);
            table.set(mask, value);
        }
    }
}

struct DedupRow {
    ctx: u16,
    levels: Vec<u32>,
    weight: u64,
}

type ProjKey = ([u32; MAX_ACTIONS_PER_RULE], u16, u64);

/// Group identical (context, projected level row) ticks, weighting by count.
fn dedup_rows(series: &TickSeries, cols: &[Option<usize>]) -> Vec<DedupRow> {
    let mut ctx_ids: BTreeMap<&str, u16> = BTreeMap::new();
    let mut grouped: BTreeMap<(u16, Vec<u32>), u64> = BTreeMap::new();
    for (ctx, row) in series.truth.iter().zip(&series.action_truth) {
        let next = ctx_ids.len() as u16;
        let id = *ctx_ids.entry(ctx).or_insert(next);
        let levels: Vec<u32> = cols.iter().map(|c| c.map_or(0, |i| row[i])).collect();
        *grouped.entry((id, levels)).or_insert(0) += 1;
    }
    grouped
        .into_iter()
        .map(|((ctx, levels), weight)| DedupRow { ctx, levels, weight })
        .collect()
}

fn context_entropy_of(rows: &[DedupRow], n: u64) -> f64 {
    let mut ctx: BTreeMap<u16, u64> = BTreeMap::new();
    for r in rows {
        *ctx.entry(r.ctx).or_insert(0) += r.weight;
    }
    let n = n as f64;
    ctx.values()
        .map(|&w| {
            let p = w as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Normalized MI of the projection onto `sel`, via sort-and-group so the
/// summation order, and hence the value, is deterministic.
fn masked_nmi(
    rows: &[DedupRow],
    n: u64,
    hc: f64,
    sel: &[usize],
    scratch: &mut Vec<ProjKey>,
) -> f64 {
    if hc <= 0.0 {
        return 0.0;
    }
    scratch.clear();
    for r in rows {
        let mut key = [0u32; MAX_ACTIONS_PER_RULE];
        for (slot, &col) in key.iter_mut().zip(sel.iter()) {
            *slot = r.levels[col];
        }
        scratch.push((key, r.ctx, r.weight));
    }
    scratch.sort_unstable();

    let mut ctx_w: BTreeMap<u16, u64> = BTreeMap::new();
    for &(_, c, w) in scratch.iter() {
        *ctx_w.entry(c).or_insert(0) += w;
    }

    let nf = n as f64;
    let mut mi = 0.0;
    let mut i = 0;
    while i < scratch.len() {
        // one action-tuple group
        let key = scratch[i].0;
        let mut j = i;
        let mut a_total = 0u64;
        while j < scratch.len() && scratch[j].0 == key {
            a_total += scratch[j].2;
            j += 1;
        }
        let pa = a_total as f64 / nf;
        // cells within the group share the tuple but may repeat contexts
        let mut k = i;
        while k < j {
            let ctx = scratch[k].1;
            let mut cell = 0u64;
            while k < j && scratch[k].1 == ctx {
                cell += scratch[k].2;
                k += 1;
            }
            let p = cell as f64 / nf;
            let pc = ctx_w[&ctx] as f64 / nf;
            mi += p * (p / (pc * pa)).log2();
        }
        i = j;
    }
    (mi / hc).clamp(0.0, 1.0)
}

/// Per observer and rule: which protected getters have been queried and the
/// resulting suspicion score.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SuspicionLedger {
    observers: BTreeMap<String, BTreeMap<usize, RuleSuspicion>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuleSuspicion {
    pub mask: u32,
    pub score: f64,
}

impl SuspicionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record that `observer` queried `action`. The queried bitmask grows and
    /// the score is copied from the table entry for the cumulative mask, so
    /// query rate never affects the score.
    pub fn note(
        &mut self,
        observer: &str,
        rule_id: usize,
        action: &MethodId,
        tables: &MiTables,
    ) -> Result<f64, DetectError> {
        let table = tables
            .table(rule_id)
            .ok_or_else(|| DetectError::NotAProtectedGetter {
                rule_id,
                action: action.clone(),
            })?;
        let bit = table
            .bit_of(action)
            .ok_or_else(|| DetectError::NotAProtectedGetter {
                rule_id,
                action: action.clone(),
            })?;
        let entry = self
            .observers
            .entry(observer.to_string())
            .or_default()
            .entry(rule_id)
            .or_insert(RuleSuspicion { mask: 0, score: 0.0 });
        entry.mask |= 1 << bit;
        entry.score = table.get(entry.mask);
        Ok(entry.score)
    }

    /// Re-copy scores for all recorded masks after a table refresh.
    pub fn refresh(&mut self, tables: &MiTables) {
        for rules in self.observers.values_mut() {
            for (rule_id, susp) in rules.iter_mut() {
                if susp.mask != 0 {
                    if let Some(table) = tables.table(*rule_id) {
                        susp.score = table.get(susp.mask);
                    }
                }
            }
        }
    }

    pub fn score(&self, observer: &str, rule_id: usize) -> Option<f64> {
        self.observers.get(observer)?.get(&rule_id).map(|s| s.score)
    }

    /// Maximum score over rules; 0 for an unknown observer.
    pub fn max_score(&self, observer: &str) -> f64 {
        self.observers
            .get(observer)
            .map(|rules| rules.values().map(|s| s.score).fold(0.0, f64::max))
            .unwrap_or(0.0)
    }

    pub fn observers(&self) -> impl Iterator<Item = &String> {
        self.observers.keys()
    }

    /// JSON dump with bitmasks encoded as sorted action-name lists.
    pub fn to_json(&self, tables: &MiTables) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for (observer, rules) in &self.observers {
            let mut per_rule = Vec::new();
            for (rule_id, susp) in rules {
                let mut names: Vec<String> = tables
                    .table(*rule_id)
                    .map(|t| {
                        t.mask_actions(susp.mask)
                            .iter()
                            .map(|a| a.as_str().to_string())
                            .collect()
                    })
                    .unwrap_or_default();
                names.sort();
                per_rule.push(serde_json::json!({
                    "rule": rule_id,
                    "queried": names,
                    "score": susp.score,
                }));
            }
            out.insert(observer.clone(), serde_json::Value::Array(per_rule));
        }
        serde_json::Value::Object(out)
    }
}

/// Detector settings. Sampling is per tick; tables refresh in full every
/// `refresh_every` ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    #[serde(default = "default_alarm_threshold")]
    pub alarm_threshold: f64,
    #[serde(default = "default_refresh_every")]
    pub refresh_every: Tick,
}

fn default_alarm_threshold() -> f64 {
    0.65
}

fn default_refresh_every() -> Tick {
    1440
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            alarm_threshold: default_alarm_threshold(),
            refresh_every: default_refresh_every(),
        }
    }
}

/// Observers whose maximum per-rule score strictly exceeds the alarm
/// threshold.
pub fn classify_observers(ledger: &SuspicionLedger, cfg: &DetectionConfig) -> BTreeSet<String> {
    ledger
        .observers()
        .filter(|o| ledger.max_score(o) > cfg.alarm_threshold)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpFnPoint {
    pub threshold: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

/// False positive / false negative rates per threshold. Flagged means
/// score strictly above the threshold.
pub fn fp_fn_sweep(
    scores: &BTreeMap<String, f64>,
    malicious_truth: &BTreeMap<String, bool>,
    thresholds: &[f64],
) -> Result<Vec<FpFnPoint>, DetectError> {
    if scores.keys().ne(malicious_truth.keys()) {
        return Err(DetectError::DegeneratePopulation(
            "score and truth maps disagree on observers".into(),
        ));
    }
    let positives = malicious_truth.values().filter(|&&m| m).count();
    let negatives = malicious_truth.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(DetectError::DegeneratePopulation(format!(
            "{positives} malicious / {negatives} benign"
        )));
    }
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let mut fp = 0usize;
            let mut fnn = 0usize;
            for (observer, &malicious) in malicious_truth {
                let flagged = scores[observer] > threshold;
                if flagged && !malicious {
                    fp += 1;
                }
                if !flagged && malicious {
                    fnn += 1;
                }
            }
            FpFnPoint {
                threshold,
                fp_rate: fp as f64 / negatives as f64,
                fn_rate: fnn as f64 / positives as f64,
            }
        })
        .collect())
}
