//! Monitoring rules produced by the miner and consumed by the runtime monitor.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::EventType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RuleKind {
    /// Body events follow the head in a fixed order with fixed counts.
    Ord,
    /// Body events follow the head with fixed counts, in any order.
    Occ,
    /// Body event types repeat a varying number of times within a range.
    Count,
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleKind::Ord => "ORD",
            RuleKind::Occ => "OCC",
            RuleKind::Count => "COUNT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitoringRule {
    pub id: String,
    pub kind: RuleKind,
    pub head: EventType,
    /// ORD: expected sequence. OCC: expected multiset, sorted. COUNT: the counted types.
    pub body: Vec<EventType>,
    /// Per-type `[min, max]` occurrence range, COUNT only.
    pub counts: BTreeMap<EventType, (u32, u32)>,
    pub delta_t_us: u64,
}

impl MonitoringRule {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: &str| {
            Err(Error::InvalidRule {
                id: self.id.clone(),
                message: message.to_string(),
            })
        };
        if self.id.is_empty() {
            return bad("empty id");
        }
        if self.delta_t_us == 0 {
            return bad("time window must be positive");
        }
        match self.kind {
            RuleKind::Ord | RuleKind::Occ => {
                if self.body.is_empty() {
                    return bad("ORD/OCC rules need a non-empty body");
                }
                if !self.counts.is_empty() {
                    return bad("count ranges are only allowed on COUNT rules");
                }
            }
            RuleKind::Count => {
                if self.counts.is_empty() {
                    return bad("COUNT rule without count ranges");
                }
                if self.counts.values().any(|&(lo, hi)| lo < 1 || lo > hi) {
                    return bad("COUNT ranges need 1 <= min <= max");
                }
                let listed: BTreeSet<_> = self.body.iter().collect();
                let ranged: BTreeSet<_> = self.counts.keys().collect();
                if listed != ranged {
                    return bad("COUNT body must list exactly the ranged types");
                }
            }
        }
        Ok(())
    }

    /// Total number of events in the pattern, head included (ORD/OCC).
    pub fn size(&self) -> usize {
        1 + self.body.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    pub delta_t_us: u64,
    pub rules: Vec<MonitoringRule>,
}

impl RuleSet {
    pub fn new(delta_t_us: u64, rules: Vec<MonitoringRule>) -> Self {
        RuleSet { delta_t_us, rules }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MonitoringRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn by_head(&self, head: &str) -> impl Iterator<Item = &MonitoringRule> {
        let head = head.to_string();
        self.rules
            .iter()
            .filter(move |r| r.head.canonical_name() == head)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for rule in &self.rules {
            rule.validate()?;
            if !seen.insert(rule.id.as_str()) {
                return Err(Error::DuplicateRuleId(rule.id.clone()));
            }
        }
        Ok(())
    }

    /// The OCC relaxation of every ORD rule; other rules are kept as they are.
    pub fn relaxed(&self) -> RuleSet {
        let rules = self
            .rules
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.kind == RuleKind::Ord {
                    r.kind = RuleKind::Occ;
                    r.body.sort();
                }
                r
            })
            .collect();
        RuleSet::new(self.delta_t_us, rules)
    }
}
