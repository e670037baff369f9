//! Non-session-aware comparison detectors working on the event-type name sequence only:
//! unseen n-grams and a variable-order Markov model with longest-suffix back-off.
//!
//! Both see a multi-tenant trace as one interleaved sequence; bodies and timestamps are ignored
//! (timestamps only label the alerts).

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alert::{FailureAlert, Violation};
use crate::error::{Error, Result};
use crate::event::Trace;

pub const UN_RULE_ID: &str = "un";
pub const PM_RULE_ID: &str = "pm";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub epsilon_pm: f64,
    pub n: usize,
    pub max_order: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            epsilon_pm: 0.01,
            n: 3,
            max_order: 3,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n-gram length must be at least 1".into()));
        }
        if self.max_order == 0 {
            return Err(Error::InvalidConfig("Markov order must be at least 1".into()));
        }
        if !(self.epsilon_pm > 0.0 && self.epsilon_pm <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "probability threshold {} outside (0, 1]",
                self.epsilon_pm
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------------------------
// Unseen n-grams
// ---------------------------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramModel {
    pub n: usize,
    pub dictionary: HashSet<Vec<String>>,
}

impl NgramModel {
    pub fn train(traces: &[Trace], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("n-gram length must be at least 1".into()));
        }
        if traces.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let dictionary = traces
            .par_iter()
            .map(|t| {
                t.type_names()
                    .windows(n)
                    .map(<[String]>::to_vec)
                    .collect::<HashSet<_>>()
            })
            .reduce(HashSet::new, |mut a, b| {
                a.extend(b);
                a
            });
        Ok(NgramModel { n, dictionary })
    }

    pub fn len(&self) -> usize {
        self.dictionary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dictionary.is_empty()
    }

    /// One alert per window absent from the dictionary, stamped with the window's last event.
    pub fn detect(&self, trace: &Trace) -> Vec<FailureAlert> {
        let names = trace.type_names();
        names
            .windows(self.n)
            .enumerate()
            .filter(|(_, w)| !self.dictionary.contains(*w))
            .map(|(i, _)| {
                let last = i + self.n - 1;
                FailureAlert {
                    rule_id: UN_RULE_ID.into(),
                    violation: Violation::Unseen,
                    ts_us: trace.events[last].ts_us,
                    occurrence: last as u64 + 1,
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------------------------
// Variable-order Markov model
// ---------------------------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextStats {
    total: u64,
    next: HashMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmmModel {
    pub max_order: usize,
    contexts: HashMap<Vec<String>, ContextStats>,
}

impl VmmModel {
    pub fn train(traces: &[Trace], max_order: usize) -> Result<Self> {
        if max_order == 0 {
            return Err(Error::InvalidConfig("Markov order must be at least 1".into()));
        }
        if traces.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let contexts = traces
            .par_iter()
            .map(|t| {
                let seq = t.type_names();
                let mut contexts: HashMap<Vec<String>, ContextStats> = HashMap::new();
                for i in 0..seq.len() {
                    for len in 0..=max_order.min(i) {
                        let stats = contexts.entry(seq[i - len..i].to_vec()).or_default();
                        stats.total += 1;
                        *stats.next.entry(seq[i].clone()).or_default() += 1;
                    }
                }
                contexts
            })
            .reduce(HashMap::new, |mut a, b| {
                for (ctx, stats) in b {
                    let into = a.entry(ctx).or_default();
                    into.total += stats.total;
                    for (n, c) in stats.next {
                        *into.next.entry(n).or_default() += c;
                    }
                }
                a
            });
        Ok(VmmModel { max_order, contexts })
    }

    pub fn count(&self, context: &[String], next: &str) -> u64 {
        self.contexts
            .get(context)
            .and_then(|s| s.next.get(next))
            .copied()
            .unwrap_or(0)
    }

    pub fn context_count(&self, context: &[String]) -> u64 {
        self.contexts.get(context).map_or(0, |s| s.total)
    }

    /// Longest stored suffix of `context` (at most `max_order` long).
    pub fn chosen_suffix<'a>(&self, context: &'a [String]) -> &'a [String] {
        let longest = self.max_order.min(context.len());
        (0..=longest)
            .rev()
            .map(|len| &context[context.len() - len..])
            .find(|s| self.context_count(s) > 0)
            .unwrap_or(&context[context.len()..])
    }

    /// Next-symbols observed after a context, with counts.
    pub fn successors(&self, context: &[String]) -> Vec<(&str, u64)> {
        let mut v: Vec<(&str, u64)> = self
            .contexts
            .get(context)
            .map(|s| s.next.iter().map(|(n, &c)| (n.as_str(), c)).collect())
            .unwrap_or_default();
        v.sort();
        v
    }

    /// Probability of `next` as an exact ratio: the longest suffix of the context after which
    /// `next` was seen gives `count(suffix, next) / count(suffix)`; `(0, 1)` when never seen.
    pub fn prob_ratio(&self, context: &[String], next: &str) -> (u64, u64) {
        let longest = self.max_order.min(context.len());
        for len in (0..=longest).rev() {
            let suffix = &context[context.len() - len..];
            let hits = self.count(suffix, next);
            if hits > 0 {
                return (hits, self.context_count(suffix));
            }
        }
        (0, 1)
    }

    pub fn prob(&self, context: &[String], next: &str) -> f64 {
        let (num, den) = self.prob_ratio(context, next);
        num as f64 / den as f64
    }

    /// Alerts at every position whose probability given the preceding events is below `epsilon`.
    pub fn detect(&self, trace: &Trace, epsilon: f64) -> Vec<FailureAlert> {
        let names = trace.type_names();
        (0..names.len())
            .filter(|&i| {
                let ctx = &names[i.saturating_sub(self.max_order)..i];
                self.prob(ctx, &names[i]) < epsilon
            })
            .map(|i| FailureAlert {
                rule_id: PM_RULE_ID.into(),
                violation: Violation::Improbable,
                ts_us: trace.events[i].ts_us,
                occurrence: i as u64 + 1,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;
    use std::collections::BTreeMap;

    fn trace(names: &[&str]) -> Trace {
        Trace::new(
            "t",
            names
                .iter()
                .enumerate()
                .map(|(i, n)| Event::rpc(i as u64, format!("s_{n}").parse().unwrap(), BTreeMap::new()))
                .collect(),
        )
    }

    fn s(names: &[&str]) -> Vec<String> {
        names.iter().map(|n| format!("s_{n}")).collect()
    }

    #[test]
    fn bigram_dictionary() {
        let m = NgramModel::train(&[trace(&["A", "B", "C"])], 2).unwrap();
        let expected: HashSet<Vec<String>> = [s(&["A", "B"]), s(&["B", "C"])].into_iter().collect();
        assert_eq!(m.dictionary, expected);
    }

    #[test]
    fn unigram_dictionary_is_vocabulary() {
        let m = NgramModel::train(&[trace(&["A", "B", "A", "C"])], 1).unwrap();
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn ngram_detection() {
        let t = trace(&["A", "B", "C", "A", "B"]);
        let m = NgramModel::train(std::slice::from_ref(&t), 3).unwrap();
        assert!(m.detect(&t).is_empty());
        let novel = trace(&["A", "B", "X", "A"]);
        let alerts = m.detect(&novel);
        assert!(!alerts.is_empty());
        assert_eq!(alerts[0].ts_us, 2);
        assert!(m.detect(&trace(&["A", "B"])).is_empty());
    }

    #[test]
    fn invalid_parameters() {
        assert!(NgramModel::train(&[trace(&["A"])], 0).is_err());
        assert!(matches!(NgramModel::train(&[], 3), Err(Error::EmptyCorpus)));
        assert!(matches!(VmmModel::train(&[], 3), Err(Error::EmptyCorpus)));
        assert!(VmmModel::train(&[trace(&["A"])], 0).is_err());
    }

    #[test]
    fn vmm_order_one_probabilities() {
        let m = VmmModel::train(&[trace(&["A", "A", "B", "A", "B"])], 1).unwrap();
        assert_eq!(m.prob_ratio(&s(&["A"]), "s_B"), (2, 3));
        assert_eq!(m.prob_ratio(&s(&["A"]), "s_A"), (1, 3));
        // back-off to the empty context: A seen 3 times out of 5
        assert_eq!(m.prob_ratio(&s(&["B"]), "s_B"), (2, 5));
        assert_eq!(m.prob_ratio(&s(&["B"]), "s_Z"), (0, 1));
    }

    #[test]
    fn deterministic_chain_has_no_alerts() {
        let t = trace(&["A", "B", "C", "D", "A", "B", "C", "D"]);
        let m = VmmModel::train(std::slice::from_ref(&t), 3).unwrap();
        // first symbol backs off to the empty context: 2/8
        assert!(m.detect(&t, 0.01).is_empty());
        let alerts = m.detect(&trace(&["A", "Z"]), 0.01);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].occurrence, 2);
    }
}
