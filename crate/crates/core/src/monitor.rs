//! Streaming monitor enforcing mined rules over a timestamp-ordered event stream.
//!
//! Without session ids, concurrent tenants are told apart by occurrence counters: every event
//! type has a global counter, the k-th head occurrence opens instance k of each rule it heads,
//! and instance k only accepts the body events whose own per-type index belongs to it. For a
//! body type expected `c` times per instance, instance k owns indices `(k-1)*c + 1 ..= k*c`.
//! COUNT rules instead draw from a shared pool: each counted event is credited to the oldest live
//! instance that still has room, so concurrent activations raise the tolerated total.
//!
//! The monitor is driven by event time only: timers fire when a later event or an explicit
//! [`Monitor::tick`] moves the clock past their deadline, so offline replay and live monitoring
//! behave identically.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::alert::{FailureAlert, Violation, REST_RULE_ID};
use crate::error::{Error, Result};
use crate::event::{Event, Trace};
use crate::rules::{RuleKind, RuleSet};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MonitorOptions {
    /// Raise `under_count` when a COUNT instance expires below its minimum.
    pub under_count_alerts: bool,
}

#[derive(Debug, Clone)]
enum Pattern {
    /// Expected `(type, per-type slot)` sequence; slot j of type T maps to index (k-1)*c_T + j.
    Ord(Vec<(String, u64)>),
    Occ(Vec<(String, u64)>),
    Count(BTreeMap<String, (u32, u32)>),
}

#[derive(Debug, Clone)]
struct CompiledRule {
    id: String,
    delta_t_us: u64,
    pattern: Pattern,
    /// Occurrences per instance of every body type.
    per_instance: HashMap<String, u64>,
}

#[derive(Debug, Clone)]
enum Pending {
    Ord { expected: Vec<(String, u64)>, next: usize },
    Occ(Vec<(String, u64)>),
    Count(BTreeMap<String, u32>),
}

#[derive(Debug, Clone)]
struct RuleInstance {
    occurrence: u64,
    opened_at_us: u64,
    deadline_us: u64,
    pending: Pending,
}

#[derive(Debug, Clone)]
pub struct Monitor {
    rules: Vec<CompiledRule>,
    by_head: HashMap<String, Vec<usize>>,
    by_body: HashMap<String, Vec<usize>>,
    counters: HashMap<String, u64>,
    /// Live instances per rule, in occurrence order.
    live: Vec<VecDeque<RuleInstance>>,
    clock: Option<u64>,
    options: MonitorOptions,
    max_delta_t_us: u64,
}

impl Monitor {
    /// Compiles a rule set into a monitor with empty counters and no live instances.
    pub fn compile(rules: &RuleSet, options: MonitorOptions) -> Result<Self> {
        rules.validate()?;
        let mut compiled = Vec::with_capacity(rules.len());
        let mut by_head: HashMap<String, Vec<usize>> = HashMap::new();
        let mut by_body: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, rule) in rules.rules.iter().enumerate() {
            let mut per_instance: HashMap<String, u64> = HashMap::new();
            let slotted = |per_instance: &mut HashMap<String, u64>| -> Vec<(String, u64)> {
                rule.body
                    .iter()
                    .map(|t| {
                        let name = t.canonical_name();
                        let slot = per_instance.entry(name.clone()).or_insert(0);
                        *slot += 1;
                        (name, *slot)
                    })
                    .collect()
            };
            let pattern = match rule.kind {
                RuleKind::Ord => Pattern::Ord(slotted(&mut per_instance)),
                RuleKind::Occ => Pattern::Occ(slotted(&mut per_instance)),
                RuleKind::Count => Pattern::Count(
                    rule.counts
                        .iter()
                        .map(|(t, &r)| (t.canonical_name(), r))
                        .collect(),
                ),
            };
            by_head.entry(rule.head.canonical_name()).or_default().push(i);
            let mut body_types: Vec<String> = rule.body.iter().map(|t| t.canonical_name()).collect();
            body_types.sort();
            body_types.dedup();
            for t in body_types {
                by_body.entry(t).or_default().push(i);
            }
            compiled.push(CompiledRule {
                id: rule.id.clone(),
                delta_t_us: rule.delta_t_us,
                pattern,
                per_instance,
            });
        }
        let max_delta_t_us = compiled
            .iter()
            .map(|r| r.delta_t_us)
            .max()
            .unwrap_or(rules.delta_t_us);
        Ok(Monitor {
            live: vec![VecDeque::new(); compiled.len()],
            rules: compiled,
            by_head,
            by_body,
            counters: HashMap::new(),
            clock: None,
            options,
            max_delta_t_us,
        })
    }

    pub fn clock(&self) -> Option<u64> {
        self.clock
    }

    pub fn counter(&self, type_name: &str) -> u64 {
        self.counters.get(type_name).copied().unwrap_or(0)
    }

    pub fn live_instances(&self) -> usize {
        self.live.iter().map(VecDeque::len).sum()
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    /// Largest rule window; the final tick of a replay happens this long after the last event.
    pub fn max_delta_t_us(&self) -> u64 {
        self.max_delta_t_us
    }

    fn check_clock(&self, ts: u64) -> Result<()> {
        match self.clock {
            Some(clock) if ts < clock => Err(Error::TimestampRegression {
                event_us: ts,
                clock_us: clock,
            }),
            _ => Ok(()),
        }
    }

    /// Closes instances whose deadline satisfies `due`, oldest deadline first.
    fn expire(&mut self, due: impl Fn(u64) -> bool, out: &mut Vec<FailureAlert>) {
        let mut expired = Vec::new();
        for (r, live) in self.live.iter_mut().enumerate() {
            live.retain(|inst| {
                if due(inst.deadline_us) {
                    expired.push((inst.deadline_us, r, inst.clone()));
                    false
                } else {
                    true
                }
            });
        }
        expired.sort_by_key(|(deadline, r, inst)| (*deadline, *r, inst.occurrence));
        for (deadline, r, inst) in expired {
            let rule = &self.rules[r];
            let violation = match (&inst.pending, &rule.pattern) {
                (Pending::Count(tally), Pattern::Count(ranges)) => {
                    let under = ranges
                        .iter()
                        .any(|(t, &(lo, _))| tally.get(t).copied().unwrap_or(0) < lo);
                    (under && self.options.under_count_alerts).then_some(Violation::UnderCount)
                }
                _ => Some(Violation::Timeout),
            };
            if let Some(violation) = violation {
                out.push(FailureAlert {
                    rule_id: rule.id.clone(),
                    violation,
                    ts_us: deadline,
                    occurrence: inst.occurrence,
                });
            }
        }
    }

    /// Expires every instance whose deadline is at or before `now_us`.
    pub fn tick(&mut self, now_us: u64) -> Result<Vec<FailureAlert>> {
        self.check_clock(now_us)?;
        let mut out = Vec::new();
        self.expire(|deadline| deadline <= now_us, &mut out);
        self.clock = Some(now_us);
        Ok(out)
    }

    /// Consumes one event and returns the alerts it triggers, in detection-time order.
    pub fn feed(&mut self, event: &Event) -> Result<Vec<FailureAlert>> {
        let ts = event.ts_us;
        self.check_clock(ts)?;
        let mut out = Vec::new();
        // an event landing exactly on a deadline still belongs to the window
        self.expire(|deadline| deadline < ts, &mut out);
        self.clock = Some(ts);

        let name = event.etype.canonical_name();
        let k = {
            let c = self.counters.entry(name.clone()).or_insert(0);
            *c += 1;
            *c
        };

        if let Some(rule_ids) = self.by_head.get(&name) {
            for &r in rule_ids {
                let rule = &self.rules[r];
                let pending = match &rule.pattern {
                    Pattern::Ord(slots) => Pending::Ord {
                        expected: slots
                            .iter()
                            .map(|(t, j)| (t.clone(), (k - 1) * rule.per_instance[t] + j))
                            .collect(),
                        next: 0,
                    },
                    Pattern::Occ(slots) => Pending::Occ(
                        slots
                            .iter()
                            .map(|(t, j)| (t.clone(), (k - 1) * rule.per_instance[t] + j))
                            .collect(),
                    ),
                    Pattern::Count(_) => Pending::Count(BTreeMap::new()),
                };
                self.live[r].push_back(RuleInstance {
                    occurrence: k,
                    opened_at_us: ts,
                    deadline_us: ts.saturating_add(rule.delta_t_us),
                    pending,
                });
            }
        }

        if let Some(rule_ids) = self.by_body.get(&name).cloned() {
            for r in rule_ids {
                if let Some(alert) = self.deliver(r, &name, k, ts) {
                    out.push(alert);
                }
            }
        }

        if event.status_class().is_error() {
            out.push(FailureAlert {
                rule_id: REST_RULE_ID.to_string(),
                violation: Violation::RestError,
                ts_us: ts,
                occurrence: k,
            });
        }
        Ok(out)
    }

    fn deliver(&mut self, r: usize, name: &str, index: u64, ts: u64) -> Option<FailureAlert> {
        let rule = &self.rules[r];
        let live = &mut self.live[r];
        if let Pattern::Count(ranges) = &rule.pattern {
            let max = ranges[name].1;
            let pos = live
                .iter()
                .position(|inst| match &inst.pending {
                    Pending::Count(tally) => tally.get(name).copied().unwrap_or(0) < max,
                    _ => false,
                })
                .or_else(|| live.len().checked_sub(1))?;
            let Pending::Count(tally) = &mut live[pos].pending else {
                unreachable!("COUNT rules only hold COUNT instances")
            };
            let t = tally.entry(name.to_string()).or_insert(0);
            *t += 1;
            if *t > max {
                let inst = live.remove(pos)?;
                return Some(FailureAlert {
                    rule_id: rule.id.clone(),
                    violation: Violation::OverCount,
                    ts_us: ts,
                    occurrence: inst.occurrence,
                });
            }
            return None;
        }

        let per = rule.per_instance[name];
        let owner = (index - 1) / per + 1;
        let pos = live.binary_search_by_key(&owner, |inst| inst.occurrence).ok()?;
        let key = (name.to_string(), index);
        let inst = &mut live[pos];
        debug_assert!(inst.opened_at_us <= ts);
        match &mut inst.pending {
            Pending::Ord { expected, next } => {
                if expected[*next] == key {
                    *next += 1;
                    if *next == expected.len() {
                        live.remove(pos);
                    }
                } else if expected[*next..].contains(&key) {
                    let inst = live.remove(pos)?;
                    return Some(FailureAlert {
                        rule_id: rule.id.clone(),
                        violation: Violation::OutOfOrder,
                        ts_us: ts,
                        occurrence: inst.occurrence,
                    });
                }
            }
            Pending::Occ(pending) => {
                if let Some(i) = pending.iter().position(|p| *p == key) {
                    pending.swap_remove(i);
                    if pending.is_empty() {
                        live.remove(pos);
                    }
                }
            }
            Pending::Count(_) => unreachable!("non-COUNT rules never hold COUNT instances"),
        }
        None
    }

    /// Feeds a whole trace, then ticks once at the last timestamp plus the largest window.
    pub fn run_stream(&mut self, trace: &Trace) -> Result<Vec<FailureAlert>> {
        let mut alerts = Vec::new();
        for event in &trace.events {
            alerts.extend(self.feed(event)?);
        }
        if let Some(last) = trace.last_ts() {
            alerts.extend(self.tick(last.saturating_add(self.max_delta_t_us))?);
        }
        Ok(alerts)
    }
}

/// Compiles `rules` and replays `trace` through a fresh monitor.
pub fn monitor_trace(rules: &RuleSet, trace: &Trace, options: MonitorOptions) -> Result<Vec<FailureAlert>> {
    Monitor::compile(rules, options)?.run_stream(trace)
}

/// Alerts of the REST-error rule alone.
pub fn rest_only_alerts(trace: &Trace) -> Vec<FailureAlert> {
    let mut counters: HashMap<String, u64> = HashMap::new();
    let mut out = Vec::new();
    for e in &trace.events {
        let k = counters.entry(e.etype.canonical_name()).or_insert(0);
        *k += 1;
        if e.status_class().is_error() {
            out.push(FailureAlert {
                rule_id: REST_RULE_ID.to_string(),
                violation: Violation::RestError,
                ts_us: e.ts_us,
                occurrence: *k,
            });
        }
    }
    out
}
