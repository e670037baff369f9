//! Count tables for the sequence baselines, built by direct enumeration.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rulewatch::event::{Event, Trace};

pub fn trace(id: &str, symbols: &str) -> Trace {
    let events = symbols
        .chars()
        .enumerate()
        .map(|(i, c)| Event::rpc(i as u64 * 10, format!("svc_{c}").parse().unwrap(), BTreeMap::new()))
        .collect();
    Trace::new(id, events)
}

pub fn names(symbols: &str) -> Vec<String> {
    symbols.chars().map(|c| format!("svc_{c}")).collect()
}

pub fn ngrams(corpus: &[&str], n: usize) -> BTreeSet<Vec<String>> {
    let mut out = BTreeSet::new();
    for s in corpus {
        let seq = names(s);
        let mut start = 0;
        while start + n <= seq.len() {
            out.insert(seq[start..start + n].to_vec());
            start += 1;
        }
    }
    out
}

/// `count[(context, next)]` over every position and every context length up to `max_order`.
pub struct Counts {
    pub pair: BTreeMap<(Vec<String>, String), u64>,
    pub context: BTreeMap<Vec<String>, u64>,
}

pub fn counts(corpus: &[&str], max_order: usize) -> Counts {
    let mut pair = BTreeMap::new();
    let mut context = BTreeMap::new();
    for s in corpus {
        let seq = names(s);
        for i in 0..seq.len() {
            for len in 0..=max_order {
                if len > i {
                    break;
                }
                let ctx = seq[i - len..i].to_vec();
                *pair.entry((ctx.clone(), seq[i].clone())).or_insert(0) += 1;
                *context.entry(ctx).or_insert(0) += 1;
            }
        }
    }
    Counts { pair, context }
}

/// Probability of `next` after `history`: the longest suffix (up to `max_order`) after which
/// `next` occurred decides, zero when it never occurred.
pub fn prob(c: &Counts, history: &[String], next: &str, max_order: usize) -> Ratio<u64> {
    let longest = max_order.min(history.len());
    for len in (0..=longest).rev() {
        let ctx = history[history.len() - len..].to_vec();
        if let Some(&hits) = c.pair.get(&(ctx.clone(), next.to_string())) {
            return Ratio::new(hits, c.context[&ctx]);
        }
    }
    Ratio::from_integer(0)
}
