//! Brute-force re-implementation of rule mining used as a test oracle.
//!
//! Correlation is an exhaustive pairwise comparison of field-of-interest values, chains are grown
//! by fixpoint iteration instead of a queue, and the common pattern is a per-type minimum over
//! every type seen in any instance.

use std::collections::{BTreeMap, BTreeSet};

use rulewatch::event::{EventKind, Trace};
use rulewatch::rules::{MonitoringRule, RuleKind, RuleSet};

/// Chains of one trace as lists of event positions, head first.
pub fn chains(trace: &Trace, delta_t_us: u64, fields: &BTreeSet<String>) -> Vec<Vec<usize>> {
    let ev = &trace.events;
    let n = ev.len();
    let values = |i: usize| -> BTreeSet<&str> {
        ev[i]
            .body
            .iter()
            .filter(|(k, _)| fields.contains(*k))
            .map(|(_, v)| v.as_str())
            .collect()
    };
    let mut linked = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            linked[i][j] = i != j && !values(i).is_disjoint(&values(j));
        }
    }
    let mut taken = vec![false; n];
    let mut out = Vec::new();
    for head in 0..n {
        if taken[head] || ev[head].kind != EventKind::Rpc {
            continue;
        }
        let lo = ev[head].ts_us;
        let hi = lo + delta_t_us;
        let mut members = BTreeSet::from([head]);
        loop {
            let grow: Vec<usize> = (0..n)
                .filter(|&j| {
                    !taken[j]
                        && !members.contains(&j)
                        && ev[j].kind == EventKind::Rpc
                        && (lo..=hi).contains(&ev[j].ts_us)
                        && members.iter().any(|&m| linked[m][j])
                })
                .collect();
            if grow.is_empty() {
                break;
            }
            members.extend(grow);
        }
        for &m in &members {
            taken[m] = true;
        }
        out.push(members.into_iter().collect());
    }
    out
}

/// Full rule set the miner is expected to produce.
pub fn mine(traces: &[Trace], delta_t_us: u64, fields: &BTreeSet<String>) -> RuleSet {
    // head type -> (trace index, member type names in order)
    let mut groups: BTreeMap<String, Vec<(usize, Vec<String>)>> = BTreeMap::new();
    for (ti, t) in traces.iter().enumerate() {
        for c in chains(t, delta_t_us, fields) {
            let names: Vec<String> = c.iter().map(|&i| t.events[i].etype.canonical_name()).collect();
            groups.entry(names[0].clone()).or_default().push((ti, names));
        }
    }

    let mut rules = Vec::new();
    for (head, instances) in groups {
        let heading: BTreeSet<usize> = instances.iter().map(|(ti, _)| *ti).collect();
        if heading.len() != traces.len() {
            continue;
        }
        let all_types: BTreeSet<&String> = instances.iter().flat_map(|(_, n)| n.iter()).collect();
        let count = |names: &[String], t: &str| names.iter().filter(|n| n.as_str() == t).count();
        let mut common: BTreeMap<String, usize> = BTreeMap::new();
        for t in all_types {
            let m = instances.iter().map(|(_, n)| count(n, t)).min().unwrap();
            if m > 0 {
                common.insert(t.clone(), m);
            }
        }
        if common.values().sum::<usize>() < 2 {
            continue;
        }
        *common.get_mut(&head).unwrap() -= 1;
        let body_types: BTreeSet<&String> = common.iter().filter(|(_, &c)| c > 0).map(|(t, _)| t).collect();
        let bodies: Vec<Vec<String>> = instances
            .iter()
            .map(|(_, n)| n[1..].iter().filter(|x| body_types.contains(x)).cloned().collect())
            .collect();
        let tally = |b: &[String]| -> BTreeMap<String, usize> {
            body_types.iter().map(|t| ((*t).clone(), count(b, t))).collect()
        };
        let tallies: Vec<_> = bodies.iter().map(|b| tally(b)).collect();
        let same_counts = tallies.iter().all(|x| *x == tallies[0]);
        let same_order = bodies.iter().all(|b| *b == bodies[0]);
        let (kind, body, counts) = match (same_counts, same_order) {
            (true, true) => (RuleKind::Ord, bodies[0].clone(), BTreeMap::new()),
            (true, false) => {
                let mut b = bodies[0].clone();
                b.sort();
                (RuleKind::Occ, b, BTreeMap::new())
            }
            _ => {
                let ranges = body_types
                    .iter()
                    .map(|t| {
                        let per: Vec<usize> = tallies.iter().map(|x| x[*t]).collect();
                        ((*t).clone(), (*per.iter().min().unwrap() as u32, *per.iter().max().unwrap() as u32))
                    })
                    .collect();
                (RuleKind::Count, body_types.iter().map(|t| (*t).clone()).collect(), ranges)
            }
        };
        let prefix = match kind {
            RuleKind::Ord => "ord",
            RuleKind::Occ => "occ",
            RuleKind::Count => "count",
        };
        rules.push(MonitoringRule {
            id: format!("{prefix}:{head}"),
            kind,
            head: head.parse().unwrap(),
            body: body.iter().map(|b| b.parse().unwrap()).collect(),
            counts: counts.into_iter().map(|(k, v)| (k.parse().unwrap(), v)).collect(),
            delta_t_us,
        });
    }
    RuleSet::new(delta_t_us, rules)
}
