//! ORD / OCC / COUNT classification of mined rule drafts.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::event::EventType;
use crate::mining::{Chain, MinedRuleDraft};
use crate::rules::{MonitoringRule, RuleKind};

/// Body of an instance restricted to the given types, in timestamp order (head excluded).
fn restricted_body(chain: &Chain, keep: &BTreeSet<EventType>) -> Vec<EventType> {
    chain.members[1..]
        .iter()
        .filter(|m| keep.contains(&m.etype))
        .map(|m| m.etype.clone())
        .collect()
}

fn tally(seq: &[EventType]) -> BTreeMap<EventType, u32> {
    let mut counts = BTreeMap::new();
    for t in seq {
        *counts.entry(t.clone()).or_insert(0) += 1;
    }
    counts
}

pub fn rule_id(kind: RuleKind, head: &EventType) -> String {
    format!("{}:{}", kind.to_string().to_lowercase(), head)
}

/// Classifies an emittable draft.
///
/// Instances are restricted to the common body types. Constant counts and identical sequences
/// give ORD, constant counts with varying order give OCC, and any varying count gives COUNT with
/// the observed `[min, max]` per type.
pub fn classify(draft: &MinedRuleDraft) -> Result<MonitoringRule> {
    if draft.common_size() < 2 || draft.instances.is_empty() {
        return Err(Error::NotEmittable(draft.head_type.canonical_name()));
    }
    let mut body_common = draft.common_types.clone();
    if let Some(c) = body_common.get_mut(&draft.head_type) {
        *c -= 1;
    }
    let keep: BTreeSet<EventType> = body_common
        .into_iter()
        .filter(|&(_, c)| c > 0)
        .map(|(t, _)| t)
        .collect();

    let bodies: Vec<Vec<EventType>> = draft
        .instances
        .iter()
        .map(|c| restricted_body(c, &keep))
        .collect();
    let tallies: Vec<BTreeMap<EventType, u32>> = bodies.iter().map(|b| tally(b)).collect();

    let head = draft.head_type.clone();
    let counts_constant = tallies.windows(2).all(|w| w[0] == w[1]);
    let (kind, body, counts) = if counts_constant {
        if bodies.windows(2).all(|w| w[0] == w[1]) {
            (RuleKind::Ord, bodies[0].clone(), BTreeMap::new())
        } else {
            let mut body = bodies[0].clone();
            body.sort();
            (RuleKind::Occ, body, BTreeMap::new())
        }
    } else {
        let ranges: BTreeMap<EventType, (u32, u32)> = keep
            .iter()
            .map(|t| {
                let per_instance = tallies.iter().map(|m| m.get(t).copied().unwrap_or(0));
                let lo = per_instance.clone().min().unwrap_or(0);
                let hi = per_instance.max().unwrap_or(0);
                (t.clone(), (lo, hi))
            })
            .collect();
        (RuleKind::Count, keep.iter().cloned().collect(), ranges)
    };
    Ok(MonitoringRule {
        id: rule_id(kind, &head),
        kind,
        head,
        body,
        counts,
        delta_t_us: crate::mining::DEFAULT_DELTA_T_US,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::{group_by_head, ChainMember};

    fn chain(trace: &str, names: &[&str]) -> Chain {
        Chain {
            trace_id: trace.to_string(),
            members: names
                .iter()
                .enumerate()
                .map(|(i, n)| ChainMember {
                    index: i,
                    ts_us: i as u64,
                    etype: n.parse().unwrap(),
                })
                .collect(),
            witnesses: vec![],
        }
    }

    fn draft(instances: Vec<Chain>) -> MinedRuleDraft {
        let mut g = group_by_head(instances, 1);
        assert_eq!(g.len(), 1);
        g.pop_first().unwrap().1
    }

    fn names(ts: &[EventType]) -> Vec<String> {
        ts.iter().map(EventType::canonical_name).collect()
    }

    #[test]
    fn identical_sequences_are_ord() {
        let d = draft(vec![
            chain("t", &["a_x", "b_x", "c_x"]),
            chain("t", &["a_x", "b_x", "c_x"]),
            chain("t", &["a_x", "b_x", "c_x"]),
        ]);
        let r = classify(&d).unwrap();
        assert_eq!(r.kind, RuleKind::Ord);
        assert_eq!(names(&r.body), ["b_x", "c_x"]);
        assert_eq!(r.id, "ord:a_x");
    }

    #[test]
    fn varying_order_is_occ() {
        let d = draft(vec![chain("t", &["a_x", "b_x", "c_x"]), chain("t", &["a_x", "c_x", "b_x"])]);
        let r = classify(&d).unwrap();
        assert_eq!(r.kind, RuleKind::Occ);
        assert_eq!(names(&r.body), ["b_x", "c_x"]);
    }

    #[test]
    fn varying_count_is_count_with_tight_range() {
        let reps = |n: usize| {
            let mut v = vec!["neutron-server_get_device"];
            v.extend(std::iter::repeat_n("neutron-agent_ping", n));
            chain("t", &v)
        };
        let d = draft(vec![reps(6), reps(17), reps(26), reps(9)]);
        let r = classify(&d).unwrap();
        assert_eq!(r.kind, RuleKind::Count);
        let ping: EventType = "neutron-agent_ping".parse().unwrap();
        assert_eq!(r.counts[&ping], (6, 26));
        assert_eq!(r.body, vec![ping]);
        r.validate().unwrap();
    }

    #[test]
    fn count_wins_over_order_variation() {
        let d = draft(vec![
            chain("t", &["a_x", "b_x", "c_x"]),
            chain("t", &["a_x", "c_x", "b_x", "b_x"]),
        ]);
        let r = classify(&d).unwrap();
        assert_eq!(r.kind, RuleKind::Count);
        assert_eq!(r.counts.len(), 2);
    }

    #[test]
    fn non_common_types_are_dropped_before_classifying() {
        let d = draft(vec![
            chain("t", &["a_x", "b_x", "z_x", "c_x"]),
            chain("t", &["a_x", "y_x", "b_x", "c_x"]),
        ]);
        let r = classify(&d).unwrap();
        assert_eq!(r.kind, RuleKind::Ord);
        assert_eq!(names(&r.body), ["b_x", "c_x"]);
    }

    #[test]
    fn singleton_draft_is_rejected() {
        let d = draft(vec![chain("t", &["a_x"]), chain("t", &["a_x", "b_x"])]);
        assert!(matches!(classify(&d), Err(Error::NotEmittable(_))));
    }

    #[test]
    fn head_type_repeated_in_body() {
        let d = draft(vec![chain("t", &["a_x", "a_x", "b_x"]), chain("t", &["a_x", "a_x", "b_x"])]);
        let r = classify(&d).unwrap();
        assert_eq!(names(&r.body), ["a_x", "b_x"]);
    }
}
