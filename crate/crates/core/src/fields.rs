//! Selection of the body fields used to correlate events.
//!
//! A field is kept when, in every fault-free trace, its values propagate to other events
//! (propagation score) and it takes many distinct values (diversity score). Constant fields such
//! as a project id propagate everywhere but have near-zero diversity; per-message random ids are
//! diverse but never propagate.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSelectorConfig {
    pub epsilon1: f64,
    pub epsilon2: f64,
}

impl Default for FieldSelectorConfig {
    fn default() -> Self {
        FieldSelectorConfig {
            epsilon1: 0.30,
            epsilon2: 0.30,
        }
    }
}

impl FieldSelectorConfig {
    pub fn new(epsilon1: f64, epsilon2: f64) -> Result<Self> {
        let cfg = FieldSelectorConfig { epsilon1, epsilon2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon1", self.epsilon1), ("epsilon2", self.epsilon2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Per-field scores over the corpus. `None` marks a trace in which the field never occurs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub field: String,
    pub per_trace_p1: Vec<Option<f64>>,
    pub per_trace_p2: Vec<Option<f64>>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSelection {
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub selected: BTreeSet<String>,
    pub fields: Vec<FieldReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldScores {
    pub propagation: f64,
    pub diversity: f64,
}

/// Scores of every body field of one trace (RPC bodies only).
pub fn trace_scores(trace: &Trace) -> BTreeMap<String, FieldScores> {
    // number of distinct events in which each value appears, under any field
    let mut events_with_value: HashMap<&str, usize> = HashMap::new();
    for event in trace.events.iter().filter(|e| e.is_rpc()) {
        let distinct: HashSet<&str> = event.body.values().map(String::as_str).collect();
        for v in distinct {
            *events_with_value.entry(v).or_default() += 1;
        }
    }

    #[derive(Default)]
    struct Tally<'a> {
        occurrences: usize,
        propagated: usize,
        values: HashSet<&'a str>,
    }
    let mut tallies: BTreeMap<&str, Tally> = BTreeMap::new();
    for event in trace.events.iter().filter(|e| e.is_rpc()) {
        for (field, value) in &event.body {
            let t = tallies.entry(field).or_default();
            t.occurrences += 1;
            t.values.insert(value);
            if events_with_value[value.as_str()] >= 2 {
                t.propagated += 1;
            }
        }
    }
    tallies
        .into_iter()
        .map(|(field, t)| {
            let n = t.occurrences as f64;
            (
                field.to_string(),
                FieldScores {
                    propagation: t.propagated as f64 / n,
                    diversity: t.values.len() as f64 / n,
                },
            )
        })
        .collect()
}

/// Fraction of the field's occurrences whose value also appears, under any field, in at least
/// one other event of the trace.
pub fn propagation_score(field: &str, trace: &Trace) -> Result<f64> {
    trace_scores(trace)
        .get(field)
        .map(|s| s.propagation)
        .ok_or_else(|| Error::FieldAbsent(field.to_string()))
}

/// Distinct values taken by the field over the number of events carrying it.
pub fn diversity_score(field: &str, trace: &Trace) -> Result<f64> {
    trace_scores(trace)
        .get(field)
        .map(|s| s.diversity)
        .ok_or_else(|| Error::FieldAbsent(field.to_string()))
}

/// Returns the fields satisfying both properties in every trace, with a report on every field.
pub fn select_fields(traces: &[Trace], cfg: &FieldSelectorConfig) -> Result<FieldSelection> {
    if traces.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    cfg.validate()?;
    let per_trace: Vec<BTreeMap<String, FieldScores>> = traces.par_iter().map(trace_scores).collect();
    let all_fields: BTreeSet<&String> = per_trace.iter().flat_map(|m| m.keys()).collect();

    let mut selected = BTreeSet::new();
    let mut reports = Vec::with_capacity(all_fields.len());
    for field in all_fields {
        let scores: Vec<Option<&FieldScores>> = per_trace.iter().map(|m| m.get(field)).collect();
        let keep = scores.iter().all(|s| {
            s.is_some_and(|s| s.propagation >= cfg.epsilon1 && s.diversity >= cfg.epsilon2)
        });
        if keep {
            selected.insert(field.clone());
        }
        reports.push(FieldReport {
            field: field.clone(),
            per_trace_p1: scores.iter().map(|s| s.map(|s| s.propagation)).collect(),
            per_trace_p2: scores.iter().map(|s| s.map(|s| s.diversity)).collect(),
            selected: keep,
        });
    }
    Ok(FieldSelection {
        epsilon1: cfg.epsilon1,
        epsilon2: cfg.epsilon2,
        selected,
        fields: reports,
    })
}
