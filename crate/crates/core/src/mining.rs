//! Mining of monitoring rules from fault-free traces.
//!
//! RPC events are grouped into chains: starting from the earliest unassigned event (the head),
//! a chain absorbs every unassigned event that shares a field-of-interest value with one of its
//! members and lies within the time window of the head. Chains are then grouped by head type and
//! intersected across all instances; a head type whose common pattern holds at least one event
//! besides the head becomes a rule.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::classify;
use crate::error::{Error, Result};
use crate::event::{EventType, Trace};
use crate::rules::RuleSet;

pub const DEFAULT_DELTA_T_US: u64 = 35_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub delta_t_us: u64,
    pub fields_of_interest: BTreeSet<String>,
}

impl MiningConfig {
    pub fn new<I, S>(delta_t_us: u64, fields: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let cfg = MiningConfig {
            delta_t_us,
            fields_of_interest: fields.into_iter().map(Into::into).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_t_us == 0 {
            return Err(Error::InvalidConfig("time window must be positive".into()));
        }
        if self.fields_of_interest.is_empty() {
            return Err(Error::InvalidConfig("no fields of interest".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainMember {
    /// Position of the event in its trace.
    pub index: usize,
    pub ts_us: u64,
    pub etype: EventType,
}

/// Why a member joined its chain: it shares `value` with the earlier member `via`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub member: usize,
    pub via: usize,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub trace_id: String,
    /// Timestamp order; the first member is the head.
    pub members: Vec<ChainMember>,
    pub witnesses: Vec<Witness>,
}

impl Chain {
    pub fn head(&self) -> &ChainMember {
        &self.members[0]
    }

    pub fn types(&self) -> impl Iterator<Item = &EventType> {
        self.members.iter().map(|m| &m.etype)
    }

    /// Type multiset of all members, head included.
    pub fn type_counts(&self) -> BTreeMap<EventType, u32> {
        let mut counts = BTreeMap::new();
        for t in self.types() {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn span_us(&self) -> u64 {
        self.members.last().map_or(0, |m| m.ts_us - self.head().ts_us)
    }
}

/// Partitions the RPC events of a trace into chains, earliest head first.
pub fn correlate_chains(trace: &Trace, cfg: &MiningConfig) -> Vec<Chain> {
    let events = &trace.events;
    let foi_values = |i: usize| {
        events[i]
            .body
            .iter()
            .filter(|(k, _)| cfg.fields_of_interest.contains(*k))
            .map(|(_, v)| v.as_str())
    };

    let mut by_value: HashMap<&str, Vec<usize>> = HashMap::new();
    for i in (0..events.len()).filter(|&i| events[i].is_rpc()) {
        let mut seen = BTreeSet::new();
        for v in foi_values(i) {
            if seen.insert(v) {
                by_value.entry(v).or_default().push(i);
            }
        }
    }

    let mut assigned = vec![false; events.len()];
    let mut chains = Vec::new();
    for head in 0..events.len() {
        if assigned[head] || !events[head].is_rpc() {
            continue;
        }
        assigned[head] = true;
        let start = events[head].ts_us;
        let deadline = start.saturating_add(cfg.delta_t_us);
        let mut members = vec![head];
        let mut witnesses = Vec::new();
        let mut queue: VecDeque<(usize, &str)> = foi_values(head).map(|v| (head, v)).collect();
        let mut expanded: BTreeSet<&str> = BTreeSet::new();
        while let Some((via, value)) = queue.pop_front() {
            if !expanded.insert(value) {
                continue;
            }
            for &j in by_value.get(value).into_iter().flatten() {
                let ts = events[j].ts_us;
                if assigned[j] || ts < start || ts > deadline {
                    continue;
                }
                assigned[j] = true;
                members.push(j);
                witnesses.push(Witness {
                    member: j,
                    via,
                    value: value.to_string(),
                });
                queue.extend(foi_values(j).map(|v| (j, v)));
            }
        }
        members.sort_unstable();
        chains.push(Chain {
            trace_id: trace.trace_id.clone(),
            members: members
                .into_iter()
                .map(|i| ChainMember {
                    index: i,
                    ts_us: events[i].ts_us,
                    etype: events[i].etype.clone(),
                })
                .collect(),
            witnesses,
        });
    }
    chains
}

/// All chains of one head type across the corpus, with their common type multiset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinedRuleDraft {
    pub head_type: EventType,
    pub instances: Vec<Chain>,
    /// Multiset intersection of the instances' type multisets (head included).
    pub common_types: BTreeMap<EventType, u32>,
    /// Number of corpus traces in which the type heads at least one chain.
    pub traces_with_head: usize,
    pub corpus_size: usize,
}

impl MinedRuleDraft {
    pub fn common_size(&self) -> u32 {
        self.common_types.values().sum()
    }

    /// A draft becomes a rule when its pattern has at least two events and its head type
    /// starts a chain in every trace of the corpus.
    pub fn is_emittable(&self) -> bool {
        self.common_size() >= 2 && self.traces_with_head == self.corpus_size
    }
}

pub fn multiset_intersection<'a, I>(multisets: I) -> BTreeMap<EventType, u32>
where
    I: IntoIterator<Item = &'a BTreeMap<EventType, u32>>,
{
    let mut iter = multisets.into_iter();
    let Some(first) = iter.next() else {
        return BTreeMap::new();
    };
    let mut common = first.clone();
    for m in iter {
        common.retain(|t, c| match m.get(t) {
            Some(&n) => {
                *c = (*c).min(n);
                true
            }
            None => false,
        });
    }
    common
}

/// Groups chains by head type. `corpus_size` is the number of traces the chains come from.
pub fn group_by_head(chains: Vec<Chain>, corpus_size: usize) -> BTreeMap<EventType, MinedRuleDraft> {
    let mut groups: BTreeMap<EventType, Vec<Chain>> = BTreeMap::new();
    for chain in chains {
        groups.entry(chain.head().etype.clone()).or_default().push(chain);
    }
    groups
        .into_iter()
        .map(|(head_type, instances)| {
            let counts: Vec<_> = instances.iter().map(Chain::type_counts).collect();
            let common_types = multiset_intersection(&counts);
            let traces_with_head = instances
                .iter()
                .map(|c| c.trace_id.as_str())
                .collect::<BTreeSet<_>>()
                .len();
            let draft = MinedRuleDraft {
                head_type: head_type.clone(),
                instances,
                common_types,
                traces_with_head,
                corpus_size,
            };
            (head_type, draft)
        })
        .collect()
}

/// Mines one rule per emittable head type. Trace ids must be unique within the corpus.
pub fn mine_rules(traces: &[Trace], cfg: &MiningConfig) -> Result<RuleSet> {
    if traces.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    cfg.validate()?;
    let chains: Vec<Chain> = traces
        .par_iter()
        .flat_map_iter(|t| correlate_chains(t, cfg))
        .collect();
    let drafts = group_by_head(chains, traces.len());
    let mut rules = Vec::new();
    for draft in drafts.values().filter(|d| d.is_emittable()) {
        let mut rule = classify(draft)?;
        rule.delta_t_us = cfg.delta_t_us;
        rules.push(rule);
    }
    log::debug!("mined {} rules from {} head types", rules.len(), drafts.len());
    Ok(RuleSet::new(cfg.delta_t_us, rules))
}
