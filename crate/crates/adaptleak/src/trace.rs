//! Shared trace model: simulation time, action vectors, adaptation records,
//! tick-level ground truth, and trace persistence.
//!
//! Time is integer minutes since simulation start. Records are persisted as
//! line-delimited JSON; tick series and observation timelines as CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{MethodId, Registry};

/// Simulation minutes since start.
pub type Tick = u64;

pub const TICKS_PER_DAY: Tick = 1440;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("record at t={t} precedes last t={last} for rule {rule_id}")]
    NonMonotoneTimestamp { rule_id: usize, t: Tick, last: Tick },
    #[error("record for rule {rule_id} does not carry exactly the rule's action set")]
    WrongActionSet { rule_id: usize },
    #[error("record references unknown rule {0}")]
    UnknownRule(usize),
    #[error("record at t={t} is beyond horizon {horizon}")]
    RecordBeyondHorizon { t: Tick, horizon: Tick },
    #[error("series arrays disagree in length")]
    LengthMismatch,
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

/// Levels of a set of settings, keyed by method name.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVector {
    values: BTreeMap<MethodId, u32>,
}

impl ActionVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, action: MethodId, level: u32) {
        self.values.insert(action, level);
    }

    pub fn get(&self, action: &MethodId) -> Option<u32> {
        self.values.get(action).copied()
    }

    /// Overwrite entries present in `partial`, keeping everything else.
    pub fn merge(&mut self, partial: &ActionVector) {
        for (m, lvl) in &partial.values {
            self.values.insert(m.clone(), *lvl);
        }
    }

    /// Restriction to the given action set.
    pub fn project(&self, actions: &BTreeSet<MethodId>) -> ActionVector {
        ActionVector {
            values: self
                .values
                .iter()
                .filter(|(m, _)| actions.contains(*m))
                .map(|(m, l)| (m.clone(), *l))
                .collect(),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &MethodId> {
        self.values.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MethodId, u32)> {
        self.values.iter().map(|(m, l)| (m, *l))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn key_set(&self) -> BTreeSet<MethodId> {
        self.values.keys().cloned().collect()
    }
}

impl FromIterator<(MethodId, u32)> for ActionVector {
    fn from_iter<T: IntoIterator<Item = (MethodId, u32)>>(iter: T) -> Self {
        ActionVector {
            values: iter.into_iter().collect(),
        }
    }
}

/// One timestamped adaptation: the context value that fired a rule and the
/// rule's full action vector after applying it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationRecord {
    pub t: Tick,
    #[serde(rename = "rule")]
    pub rule_id: usize,
    pub context: String,
    pub actions: ActionVector,
}

/// Append-only record log validated against a registry: timestamps are
/// monotone per rule and every record carries exactly its rule's action set.
#[derive(Debug, Clone)]
pub struct AdaptationLog {
    rule_actions: BTreeMap<usize, BTreeSet<MethodId>>,
    records: Vec<AdaptationRecord>,
}

impl AdaptationLog {
    pub fn for_registry(reg: &Registry) -> Self {
        AdaptationLog {
            rule_actions: reg
                .rules()
                .iter()
                .map(|r| (r.rule_id, r.action_set()))
                .collect(),
            records: Vec::new(),
        }
    }

    pub fn record(&mut self, rec: AdaptationRecord) -> Result<(), TraceError> {
        let expected = self
            .rule_actions
            .get(&rec.rule_id)
            .ok_or(TraceError::UnknownRule(rec.rule_id))?;
        if &rec.actions.key_set() != expected {
            return Err(TraceError::WrongActionSet { rule_id: rec.rule_id });
        }
        if let Some(last) = self
            .records
            .iter()
            .rev()
            .find(|r| r.rule_id == rec.rule_id)
        {
            if rec.t < last.t {
                return Err(TraceError::NonMonotoneTimestamp {
                    rule_id: rec.rule_id,
                    t: rec.t,
                    last: last.t,
                });
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[AdaptationRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<AdaptationRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Per-tick ground truth: context symbol and full action levels, stored
/// columnar (one level row per tick, aligned to `action_names`).
#[derive(Debug, Clone, PartialEq)]
pub struct TickSeries {
    pub truth: Vec<String>,
    pub action_names: Vec<MethodId>,
    pub action_truth: Vec<Vec<u32>>,
}

impl TickSeries {
    pub fn horizon(&self) -> Tick {
        self.truth.len() as Tick
    }

    pub fn action_vector_at(&self, t: Tick) -> ActionVector {
        self.action_names
            .iter()
            .cloned()
            .zip(self.action_truth[t as usize].iter().copied())
            .collect()
    }

    pub fn column_of(&self, action: &MethodId) -> Option<usize> {
        self.action_names.iter().position(|a| a == action)
    }

    pub fn level_at(&self, t: Tick, col: usize) -> u32 {
        self.action_truth[t as usize][col]
    }

    /// Sub-series covering ticks `[start, end)`.
    pub fn slice(&self, start: Tick, end: Tick) -> TickSeries {
        TickSeries {
            truth: self.truth[start as usize..end as usize].to_vec(),
            action_names: self.action_names.clone(),
            action_truth: self.action_truth[start as usize..end as usize].to_vec(),
        }
    }

    /// Replace each context symbol via the mapping; unmapped symbols are kept.
    pub fn relabel(&self, mapping: &BTreeMap<String, String>) -> TickSeries {
        TickSeries {
            truth: self
                .truth
                .iter()
                .map(|c| mapping.get(c).unwrap_or(c).clone())
                .collect(),
            action_names: self.action_names.clone(),
            action_truth: self.action_truth.clone(),
        }
    }

    /// Ticks where the context or any action level differs from the
    /// previous tick (tick 0 always included).
    pub fn change_points(&self) -> Vec<Tick> {
        let mut points = Vec::new();
        for t in 0..self.truth.len() {
            if t == 0
                || self.truth[t] != self.truth[t - 1]
                || self.action_truth[t] != self.action_truth[t - 1]
            {
                points.push(t as Tick);
            }
        }
        points
    }
}

/// What one observer saw, reconstructed per tick: one level row per tick,
/// aligned to `actions`. Masked reads appear as level 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLog {
    pub observer: String,
    pub actions: Vec<MethodId>,
    pub rows: Vec<Vec<u32>>,
}

impl ObservationLog {
    /// The unmitigated view: the true series projected to the queried actions.
    pub fn from_series(series: &TickSeries, actions: &[MethodId], observer: &str) -> Self {
        let cols: Vec<usize> = actions
            .iter()
            .map(|a| series.column_of(a).expect("action not in series"))
            .collect();
        ObservationLog {
            observer: observer.to_string(),
            actions: actions.to_vec(),
            rows: series
                .action_truth
                .iter()
                .map(|row| cols.iter().map(|&c| row[c]).collect())
                .collect(),
        }
    }

    pub fn slice(&self, start: Tick, end: Tick) -> ObservationLog {
        ObservationLog {
            observer: self.observer.clone(),
            actions: self.actions.clone(),
            rows: self.rows[start as usize..end as usize].to_vec(),
        }
    }

    pub fn horizon(&self) -> Tick {
        self.rows.len() as Tick
    }
}

/// Last-value-hold expansion of a record log onto a tick grid. Ticks before
/// the first record carry `initial`.
pub fn tick_expand(
    records: &[AdaptationRecord],
    horizon: Tick,
    initial: (&str, &ActionVector),
) -> Result<TickSeries, TraceError> {
    for w in records.windows(2) {
        if w[1].t < w[0].t {
            return Err(TraceError::NonMonotoneTimestamp {
                rule_id: w[1].rule_id,
                t: w[1].t,
                last: w[0].t,
            });
        }
    }
    if let Some(r) = records.iter().find(|r| r.t >= horizon) {
        return Err(TraceError::RecordBeyondHorizon { t: r.t, horizon });
    }

    let mut vec = initial.1.clone();
    for r in records {
        vec.merge(&r.actions);
    }
    let action_names: Vec<MethodId> = vec.keys().cloned().collect();
    let col: BTreeMap<&MethodId, usize> =
        action_names.iter().enumerate().map(|(i, m)| (m, i)).collect();

    let mut current: Vec<u32> = {
        let mut row = vec![0u32; action_names.len()];
        for (m, lvl) in initial.1.iter() {
            row[col[&m]] = lvl;
        }
        row
    };
    let mut context = initial.0.to_string();
    let mut truth = Vec::with_capacity(horizon as usize);
    let mut action_truth = Vec::with_capacity(horizon as usize);
    let mut next = 0usize;
    for t in 0..horizon {
        while next < records.len() && records[next].t == t {
            context = records[next].context.clone();
            for (m, lvl) in records[next].actions.iter() {
                current[col[&m]] = lvl;
            }
            next += 1;
        }
        truth.push(context.clone());
        action_truth.push(current.clone());
    }
    Ok(TickSeries {
        truth,
        action_names,
        action_truth,
    })
}

/// Write a record log as line-delimited JSON, one record per line.
pub fn write_records(path: &Path, records: &[AdaptationRecord]) -> Result<(), TraceError> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| TraceError::SchemaMismatch(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<AdaptationRecord>, TraceError> {
    let r = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AdaptationRecord = serde_json::from_str(&line)
            .map_err(|e| TraceError::SchemaMismatch(format!("line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

/// Write a tick series as CSV with header `t,context,<action names...>`.
pub fn write_series(path: &Path, series: &TickSeries) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["t".to_string(), "context".to_string()];
    header.extend(series.action_names.iter().map(|m| m.as_str().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (t, (ctx, row)) in series.truth.iter().zip(&series.action_truth).enumerate() {
        let mut rec = vec![t.to_string(), ctx.clone()];
        rec.extend(row.iter().map(|l| l.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series(path: &Path) -> Result<TickSeries, TraceError> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header = r.headers().map_err(csv_err)?.clone();
    if header.len() < 2 || &header[0] != "t" || &header[1] != "context" {
        return Err(TraceError::SchemaMismatch(
            "expected header t,context,<actions...>".into(),
        ));
    }
    let action_names: Vec<MethodId> = header
        .iter()
        .skip(2)
        .map(|h| MethodId::new(h).map_err(|e| TraceError::SchemaMismatch(e.to_string())))
        .collect::<Result<_, _>>()?;
    let mut truth = Vec::new();
    let mut action_truth = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let t: usize = rec[0]
            .parse()
            .map_err(|_| TraceError::SchemaMismatch(format!("row {}: bad tick", i + 1)))?;
        if t != i {
            return Err(TraceError::SchemaMismatch(format!(
                "row {}: non-contiguous tick {t}",
                i + 1
            )));
        }
        truth.push(rec[1].to_string());
        let row: Vec<u32> = rec
            .iter()
            .skip(2)
            .map(|f| {
                f.parse()
                    .map_err(|_| TraceError::SchemaMismatch(format!("row {}: bad level", i + 1)))
            })
            .collect::<Result<_, _>>()?;
        if row.len() != action_names.len() {
            return Err(TraceError::LengthMismatch);
        }
        action_truth.push(row);
    }
    Ok(TickSeries {
        truth,
        action_names,
        action_truth,
    })
}

/// Write an observation timeline as CSV with header `t,<action names...>`.
pub fn write_observations(path: &Path, log: &ObservationLog) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["t".to_string()];
    header.extend(log.actions.iter().map(|m| m.as_str().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (t, row) in log.rows.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|l| l.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations(path: &Path, observer: &str) -> Result<ObservationLog, TraceError> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header = r.headers().map_err(csv_err)?.clone();
    if header.is_empty() || &header[0] != "t" {
        return Err(TraceError::SchemaMismatch(
            "expected header t,<actions...>".into(),
        ));
    }
    let actions: Vec<MethodId> = header
        .iter()
        .skip(1)
        .map(|h| MethodId::new(h).map_err(|e| TraceError::SchemaMismatch(e.to_string())))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row: Vec<u32> = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.parse()
                    .map_err(|_| TraceError::SchemaMismatch(format!("row {}: bad level", i + 1)))
            })
            .collect::<Result<_, _>>()?;
        if row.len() != actions.len() {
            return Err(TraceError::LengthMismatch);
        }
        rows.push(row);
    }
    Ok(ObservationLog {
        observer: observer.to_string(),
        actions,
        rows,
    })
}

fn csv_err(e: csv::Error) -> TraceError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => TraceError::IoFailure(io),
        other => TraceError::SchemaMismatch(format!("{other:?}")),
    }
}
