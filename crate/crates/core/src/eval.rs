//! Scoring of alert streams against injected-fault ground truth.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::alert::{is_sorted, FailureAlert};
use crate::error::{Error, Result};
use crate::io::ExperimentRecord;
use crate::mining::DEFAULT_DELTA_T_US;

pub const DEFAULT_GRACE_US: u64 = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Tp,
    Fp,
    Fn,
    Tn,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Tp => "TP",
            Label::Fp => "FP",
            Label::Fn => "FN",
            Label::Tn => "TN",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub label: Label,
    /// First alert time minus workload start; present exactly for true positives.
    pub detection_latency_us: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub delta_t_us: u64,
    pub grace_us: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            delta_t_us: DEFAULT_DELTA_T_US,
            grace_us: DEFAULT_GRACE_US,
        }
    }
}

/// Labels one experiment from its first alert.
///
/// With a failure at `t_f`, the first alert must fall in `[t_f, t_f + ΔT + grace]` to count as a
/// detection; earlier alerts are false positives and later ones miss the first failure.
pub fn score(alerts: &[FailureAlert], truth: &ExperimentRecord, cfg: &ScoreConfig) -> Result<Outcome> {
    if !is_sorted(alerts) {
        return Err(Error::UnsortedAlerts);
    }
    let first = alerts.first().map(|a| a.ts_us);
    let (label, latency) = match (truth.first_failure_us, first) {
        (None, None) => (Label::Tn, None),
        (None, Some(_)) => (Label::Fp, None),
        (Some(_), None) => (Label::Fn, None),
        (Some(tf), Some(a)) if a < tf => (Label::Fp, None),
        (Some(tf), Some(a)) if a <= tf.saturating_add(cfg.delta_t_us).saturating_add(cfg.grace_us) => {
            (Label::Tp, Some(a.saturating_sub(truth.t_start_us)))
        }
        (Some(_), Some(_)) => (Label::Fn, None),
    };
    Ok(Outcome {
        label,
        detection_latency_us: latency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub mean_latency_us: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn aggregate(outcomes: &[Outcome]) -> Result<Metrics> {
    if outcomes.is_empty() {
        return Err(Error::EmptySet);
    }
    let count = |l: Label| outcomes.iter().filter(|o| o.label == l).count() as u64;
    let (tp, fp, fn_, tn) = (count(Label::Tp), count(Label::Fp), count(Label::Fn), count(Label::Tn));
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let latencies: Vec<u64> = outcomes.iter().filter_map(|o| o.detection_latency_us).collect();
    let mean_latency_us =
        (!latencies.is_empty()).then(|| latencies.iter().map(|&l| l as f64).sum::<f64>() / latencies.len() as f64);
    Ok(Metrics {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1,
        accuracy: ratio(tp + tn, outcomes.len() as u64),
        mean_latency_us,
    })
}
