//! Trial-level outcome records grouped by subject and condition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controller::AssistanceCondition;

/// Scalar outcome routed through the surface and statistics stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// Percent change in WBAM range; lower is better.
    #[default]
    Wbam,
    /// Perceived stability score 1–5; higher is better.
    Opus,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Wbam => "wbam",
            Outcome::Opus => "opus",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wbam" => Ok(Outcome::Wbam),
            "opus" => Ok(Outcome::Opus),
            other => Err(format!("unknown outcome '{other}' (expected wbam or opus)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub subject_id: String,
    pub condition: AssistanceCondition,
    /// Session index, 1-based.
    pub repetition: u32,
    pub value: f64,
}

/// A trial removed from analysis, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub trial_id: String,
    pub subject_id: String,
    pub condition: String,
    pub reason: String,
}

/// Per (subject, condition) summary over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub subject_id: String,
    pub condition: AssistanceCondition,
    pub n: usize,
    pub mean: f64,
    /// Sample variance over repetitions; `None` with a single repetition.
    pub variance: Option<f64>,
}

/// All trapezoid trials sharing one (magnitude, duration) point.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub magnitude: f64,
    pub duration: f64,
    /// `(subject, value)` in canonical order.
    pub trials: Vec<(String, f64)>,
}

impl Cell {
    pub fn mean(&self) -> f64 {
        self.trials.iter().map(|t| t.1).sum::<f64>() / self.trials.len() as f64
    }

    /// Within-subject variance pooled over subjects. Falls back to the plain
    /// sample variance when no subject repeats, and `None` below two trials.
    pub fn pooled_variance(&self) -> Option<f64> {
        pooled_within_variance(&self.trials)
    }
}

pub(crate) fn pooled_within_variance(trials: &[(String, f64)]) -> Option<f64> {
    let mut by_subject: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (s, v) in trials {
        by_subject.entry(s.as_str()).or_default().push(*v);
    }
    let (mut ss, mut df) = (0.0, 0usize);
    for vals in by_subject.values() {
        if vals.len() >= 2 {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            ss += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>();
            df += vals.len() - 1;
        }
    }
    if df > 0 {
        return Some(ss / df as f64);
    }
    let vals: Vec<f64> = trials.iter().map(|t| t.1).collect();
    sample_variance(&vals)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Unbiased sample variance; `None` below two values.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    Some(values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ConditionDataset {
    pub outcome: Outcome,
    records: Vec<TrialRecord>,
    pub exclusions: Vec<Exclusion>,
}

fn canonical_cmp(a: &TrialRecord, b: &TrialRecord) -> std::cmp::Ordering {
    a.condition
        .profile
        .cmp(&b.condition.profile)
        .then(a.condition.magnitude_fraction.total_cmp(&b.condition.magnitude_fraction))
        .then(a.condition.duration_multiple.total_cmp(&b.condition.duration_multiple))
        .then_with(|| a.subject_id.cmp(&b.subject_id))
        .then(a.repetition.cmp(&b.repetition))
        .then(a.value.total_cmp(&b.value))
}

impl ConditionDataset {
    /// Records are stored in a canonical order so every derived quantity is
    /// independent of input order.
    pub fn new(outcome: Outcome, mut records: Vec<TrialRecord>) -> Self {
        records.sort_by(canonical_cmp);
        Self { outcome, records, exclusions: Vec::new() }
    }

    pub fn with_exclusions(mut self, exclusions: Vec<Exclusion>) -> Self {
        self.exclusions = exclusions;
        self
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subjects(&self) -> Vec<String> {
        self.records.iter().map(|r| r.subject_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Distinct conditions in canonical order.
    pub fn conditions(&self) -> Vec<AssistanceCondition> {
        let mut out: Vec<AssistanceCondition> = Vec::new();
        for r in &self.records {
            if out.last().is_none_or(|c| c.key() != r.condition.key()) {
                out.push(r.condition);
            }
        }
        out
    }

    /// Trapezoid cells in (magnitude, duration) order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out: Vec<Cell> = Vec::new();
        for r in self.records.iter().filter(|r| r.condition.is_trapezoid()) {
            let (m, d) = (r.condition.magnitude_fraction, r.condition.duration_multiple);
            match out.last_mut() {
                Some(c) if c.magnitude == m && c.duration == d => c.trials.push((r.subject_id.clone(), r.value)),
                _ => out.push(Cell { magnitude: m, duration: d, trials: vec![(r.subject_id.clone(), r.value)] }),
            }
        }
        out
    }

    pub fn aggregated(&self) -> Vec<AggregateRecord> {
        let mut groups: BTreeMap<(String, String), (AssistanceCondition, Vec<f64>)> = BTreeMap::new();
        for r in &self.records {
            groups
                .entry((r.condition.key(), r.subject_id.clone()))
                .or_insert_with(|| (r.condition, Vec::new()))
                .1
                .push(r.value);
        }
        let mut out: Vec<AggregateRecord> = groups
            .into_iter()
            .map(|((_, subject_id), (condition, vals))| AggregateRecord {
                subject_id,
                condition,
                n: vals.len(),
                mean: mean(&vals).unwrap_or(f64::NAN),
                variance: sample_variance(&vals),
            })
            .collect();
        out.sort_by(|a, b| {
            a.subject_id.cmp(&b.subject_id).then_with(|| {
                canonical_cmp(
                    &TrialRecord { subject_id: String::new(), condition: a.condition, repetition: 0, value: 0.0 },
                    &TrialRecord { subject_id: String::new(), condition: b.condition, repetition: 0, value: 0.0 },
                )
            })
        });
        out
    }

    /// Mean per subject for one condition key.
    pub fn subject_means(&self, condition_key: &str) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.condition.key() == condition_key) {
            let e = acc.entry(r.subject_id.clone()).or_insert((0.0, 0));
            e.0 += r.value;
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    /// Copy with only the records accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&TrialRecord) -> bool) -> Self {
        Self {
            outcome: self.outcome,
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            exclusions: self.exclusions.clone(),
        }
    }

    /// Copy with every value transformed.
    pub fn map_values(&self, f: impl Fn(&TrialRecord) -> f64) -> Self {
        let records = self.records.iter().map(|r| TrialRecord { value: f(r), ..r.clone() }).collect();
        Self::new(self.outcome, records).with_exclusions(self.exclusions.clone())
    }
}
