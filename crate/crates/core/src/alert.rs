use std::fmt;

use serde::{Deserialize, Serialize};

/// Rule id used for alerts raised by the REST 4xx/5xx rule.
pub const REST_RULE_ID: &str = "rest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    Timeout,
    OutOfOrder,
    OverCount,
    /// Opt-in: a COUNT instance expired below its minimum.
    UnderCount,
    RestError,
    /// Unseen n-gram baseline.
    Unseen,
    /// Markov-model baseline.
    Improbable,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::Timeout => "timeout",
            Violation::OutOfOrder => "out_of_order",
            Violation::OverCount => "over_count",
            Violation::UnderCount => "under_count",
            Violation::RestError => "rest_error",
            Violation::Unseen => "unseen",
            Violation::Improbable => "improbable",
        })
    }
}

/// A detected failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureAlert {
    pub rule_id: String,
    pub violation: Violation,
    /// Detection time.
    pub ts_us: u64,
    /// Head occurrence index of the violated rule instance (event position for baselines).
    pub occurrence: u64,
}

/// Merges alert streams that are each sorted by `ts_us`, keeping the merge stable.
pub fn merge_sorted(streams: &[&[FailureAlert]]) -> Vec<FailureAlert> {
    let mut all: Vec<FailureAlert> = streams.iter().flat_map(|s| s.iter().cloned()).collect();
    all.sort_by_key(|a| a.ts_us);
    all
}

pub fn is_sorted(alerts: &[FailureAlert]) -> bool {
    alerts.windows(2).all(|w| w[0].ts_us <= w[1].ts_us)
}
