use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use proptest::prelude::*;
use rulewatch::alert::{is_sorted, REST_RULE_ID};
use rulewatch::baselines::{NgramModel, VmmModel};
use rulewatch::event::{Event, EventType, Trace};
use rulewatch::fields::{select_fields, trace_scores, FieldSelectorConfig};
use rulewatch::io::{alerts_to_string, parse_alert_line, parse_ruleset, parse_trace, ruleset_to_string, trace_to_string};
use rulewatch::mining::{correlate_chains, group_by_head, mine_rules, MiningConfig};
use rulewatch::monitor::{monitor_trace, MonitorOptions};
use rulewatch::rules::{MonitoringRule, RuleKind, RuleSet};

const TYPES: [&str; 5] = ["api_create", "sched_pick", "worker_build", "worker_done", "agent_sync"];
const WINDOW: u64 = 6_000_000;

fn ty(name: &str) -> EventType {
    name.parse().unwrap()
}

/// `(gap_s, type, req, greq, rest)` rows; values come from small pools so correlations occur.
fn arb_trace(id: &'static str, max_len: usize) -> impl Strategy<Value = Trace> {
    let row = (0u64..4, 0..TYPES.len(), prop::option::of(0u8..6), prop::option::of(0u8..6), prop::bool::weighted(0.1));
    prop::collection::vec(row, 0..max_len).prop_map(move |rows| {
        let mut ts = 0;
        let events = rows
            .into_iter()
            .enumerate()
            .map(|(i, (gap, t, req, greq, rest))| {
                ts += gap * 1_000_000;
                if rest {
                    return Event::rest(ts, ty("cli_post"), if i % 2 == 0 { 202 } else { 500 });
                }
                let mut body = BTreeMap::from([("host".to_string(), "n1".to_string()), ("msg".to_string(), format!("m{i}"))]);
                if let Some(r) = req {
                    body.insert("req".into(), format!("r{r}"));
                }
                if let Some(g) = greq {
                    body.insert("greq".into(), format!("r{g}"));
                }
                Event::rpc(ts, ty(TYPES[t]), body)
            })
            .collect();
        Trace::new(id, events)
    })
}

fn arb_corpus() -> impl Strategy<Value = Vec<Trace>> {
    (arb_trace("c0", 30), arb_trace("c1", 30), arb_trace("c2", 30)).prop_map(|(a, b, c)| vec![a, b, c])
}

fn mining() -> MiningConfig {
    MiningConfig::new(WINDOW, ["req", "greq"]).unwrap()
}

fn rule(kind: RuleKind, head: &str, body: &[&str]) -> MonitoringRule {
    let prefix = kind.to_string().to_lowercase();
    MonitoringRule {
        id: format!("{prefix}:{head}"),
        kind,
        head: ty(head),
        body: body.iter().map(|b| ty(b)).collect(),
        counts: BTreeMap::new(),
        delta_t_us: WINDOW,
    }
}

fn arb_ord_rules() -> impl Strategy<Value = RuleSet> {
    let one = (0..TYPES.len(), prop::collection::vec(0..TYPES.len(), 1..4));
    prop::collection::vec(one, 1..3).prop_map(|specs| {
        let mut seen = BTreeSet::new();
        let rules = specs
            .into_iter()
            .filter(|(h, _)| seen.insert(*h))
            .map(|(h, body)| {
                let body: Vec<&str> = body.into_iter().filter(|&b| b != h).map(|b| TYPES[b]).collect();
                let body = if body.is_empty() { vec![TYPES[(h + 1) % TYPES.len()]] } else { body };
                rule(RuleKind::Ord, TYPES[h], &body)
            })
            .collect();
        RuleSet::new(WINDOW, rules)
    })
}

fn flagged(alerts: &[rulewatch::alert::FailureAlert]) -> BTreeSet<(String, u64)> {
    alerts
        .iter()
        .filter(|a| a.rule_id != REST_RULE_ID)
        .map(|a| (a.rule_id.clone(), a.occurrence))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn chains_partition_rpc_events(t in arb_trace("t", 40)) {
        let chains = correlate_chains(&t, &mining());
        let mut seen = BTreeSet::new();
        for c in &chains {
            for m in &c.members {
                prop_assert!(seen.insert(m.index), "event {} in two chains", m.index);
                prop_assert!(t.events[m.index].is_rpc());
            }
            prop_assert!(c.span_us() <= WINDOW);
            prop_assert!(c.members.windows(2).all(|w| w[0].ts_us <= w[1].ts_us));
        }
        let rpcs: BTreeSet<usize> = (0..t.len()).filter(|&i| t.events[i].is_rpc()).collect();
        prop_assert_eq!(seen, rpcs);
    }

    #[test]
    fn mining_is_deterministic(corpus in arb_corpus()) {
        let a = mine_rules(&corpus, &mining()).unwrap();
        let b = mine_rules(&corpus, &mining()).unwrap();
        prop_assert_eq!(ruleset_to_string(&a), ruleset_to_string(&b));
    }

    #[test]
    fn rule_bodies_occur_in_every_instance(corpus in arb_corpus()) {
        let rules = mine_rules(&corpus, &mining()).unwrap();
        for t in &corpus {
            for c in correlate_chains(t, &mining()) {
                for r in rules.rules.iter().filter(|r| r.head == c.head().etype) {
                    let counts = c.type_counts();
                    let mut need: BTreeMap<&EventType, u32> = BTreeMap::new();
                    for b in &r.body {
                        *need.entry(b).or_default() += 1;
                    }
                    for (b, n) in need {
                        let have = counts.get(b).copied().unwrap_or(0) - u32::from(*b == r.head);
                        let lo = if r.kind == RuleKind::Count { r.counts[b].0 } else { n };
                        prop_assert!(have >= lo, "{} lacks {} in {}", r.id, b, t.trace_id);
                    }
                }
            }
        }
    }

    #[test]
    fn count_ranges_are_tight(corpus in arb_corpus()) {
        let rules = mine_rules(&corpus, &mining()).unwrap();
        let chains: Vec<_> = corpus.iter().flat_map(|t| correlate_chains(t, &mining())).collect();
        for r in rules.rules.iter().filter(|r| r.kind == RuleKind::Count) {
            for (t, &(lo, hi)) in &r.counts {
                let per: Vec<u32> = chains
                    .iter()
                    .filter(|c| c.head().etype == r.head)
                    .map(|c| c.members[1..].iter().filter(|m| &m.etype == t).count() as u32)
                    .collect();
                prop_assert_eq!(per.iter().min().copied(), Some(lo));
                prop_assert_eq!(per.iter().max().copied(), Some(hi));
            }
        }
    }

    #[test]
    fn adding_a_trace_never_grows_common_patterns(corpus in arb_corpus(), extra in arb_trace("c3", 30)) {
        let small: Vec<_> = corpus.iter().flat_map(|t| correlate_chains(t, &mining())).collect();
        let mut big = small.clone();
        big.extend(correlate_chains(&extra, &mining()));
        let before = group_by_head(small, corpus.len());
        let after = group_by_head(big, corpus.len() + 1);
        for (head, draft) in &before {
            if let Some(grown) = after.get(head) {
                for (t, n) in &grown.common_types {
                    prop_assert!(draft.common_types.get(t).is_some_and(|m| n <= m));
                }
            }
        }
    }

    #[test]
    fn field_selection_is_monotone(corpus in arb_corpus(), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0, d1 in 0.0f64..0.5, d2 in 0.0f64..0.5) {
        let lo = select_fields(&corpus, &FieldSelectorConfig::new(e1, e2).unwrap()).unwrap();
        let hi = select_fields(&corpus, &FieldSelectorConfig::new((e1 + d1).min(1.0), (e2 + d2).min(1.0)).unwrap()).unwrap();
        prop_assert!(hi.selected.is_subset(&lo.selected));
        let fewer = select_fields(&corpus[1..], &FieldSelectorConfig::new(e1, e2).unwrap()).unwrap();
        prop_assert!(lo.selected.is_subset(&fewer.selected));
        for t in &corpus {
            for s in trace_scores(t).values() {
                prop_assert!((0.0..=1.0).contains(&s.propagation) && (0.0..=1.0).contains(&s.diversity));
            }
        }
    }

    #[test]
    fn monitor_alerts_are_ordered_unique_and_replayable(rules in arb_ord_rules(), t in arb_trace("t", 60)) {
        let relaxed = rules.relaxed();
        for set in [&rules, &relaxed] {
            let a = monitor_trace(set, &t, MonitorOptions::default()).unwrap();
            prop_assert!(is_sorted(&a));
            let rule_alerts: Vec<_> = a.iter().filter(|x| x.rule_id != REST_RULE_ID).collect();
            prop_assert_eq!(flagged(&a).len(), rule_alerts.len(), "an instance alerted twice");
            let b = monitor_trace(set, &t, MonitorOptions::default()).unwrap();
            prop_assert_eq!(alerts_to_string(&a), alerts_to_string(&b));
        }
    }

    #[test]
    fn ord_flags_whatever_occ_flags(rules in arb_ord_rules(), t in arb_trace("t", 60)) {
        let ord = flagged(&monitor_trace(&rules, &t, MonitorOptions::default()).unwrap());
        let occ = flagged(&monitor_trace(&rules.relaxed(), &t, MonitorOptions::default()).unwrap());
        prop_assert!(occ.is_subset(&ord), "OCC-only flags: {:?}", occ.difference(&ord).collect::<Vec<_>>());
    }

    #[test]
    fn mined_rule_files_round_trip(corpus in arb_corpus()) {
        let rules = mine_rules(&corpus, &mining()).unwrap();
        let text = ruleset_to_string(&rules);
        prop_assert_eq!(parse_ruleset(&text, Path::new("r")).unwrap(), rules);
    }

    #[test]
    fn trace_and_alert_files_round_trip(t in arb_trace("t", 40), rules in arb_ord_rules()) {
        let text = trace_to_string(&t);
        let back = parse_trace(&text, "t", Path::new("t")).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(trace_to_string(&back), text);
        let alerts = monitor_trace(&rules, &t, MonitorOptions::default()).unwrap();
        let lines = alerts_to_string(&alerts);
        let parsed: Vec<_> = lines.lines().enumerate().map(|(i, l)| parse_alert_line(l, Path::new("a"), i + 1).unwrap()).collect();
        prop_assert_eq!(parsed, alerts);
    }

    #[test]
    fn baselines_ignore_bodies_and_timestamps(t in arb_trace("t", 40), scale in 1u64..5) {
        let train = [t.clone()];
        let un = NgramModel::train(&train, 2).unwrap();
        let pm = VmmModel::train(&train, 2).unwrap();
        let stripped = Trace::new(
            "s",
            t.events
                .iter()
                .map(|e| Event { ts_us: e.ts_us * scale, body: BTreeMap::new(), ..e.clone() })
                .collect(),
        );
        let probe = [&t, &stripped];
        let occ = |a: Vec<rulewatch::alert::FailureAlert>| a.into_iter().map(|x| x.occurrence).collect::<Vec<_>>();
        prop_assert!(un.detect(&t).is_empty());
        prop_assert_eq!(occ(un.detect(probe[0])), occ(un.detect(probe[1])));
        prop_assert_eq!(occ(pm.detect(probe[0], 0.3)), occ(pm.detect(probe[1], 0.3)));
    }
}

/// Sessions of `H -> A -> B` whose per-type arrival order matches their head order.
fn aligned_sessions(starts: &[u64], a_off: &[u64], b_off: &[u64]) -> Vec<Event> {
    let mut events = Vec::new();
    let (mut last_a, mut last_b) = (0, 0);
    for (i, &s) in starts.iter().enumerate() {
        let a = (s + a_off[i]).max(last_a + 1);
        let b = (a + 1 + b_off[i]).max(last_b + 1);
        last_a = a;
        last_b = b;
        events.push(Event::rpc(s, ty("api_create"), BTreeMap::new()));
        events.push(Event::rpc(a, ty("sched_pick"), BTreeMap::new()));
        events.push(Event::rpc(b, ty("worker_done"), BTreeMap::new()));
    }
    events
}

fn arb_starts() -> impl Strategy<Value = (Vec<u64>, Vec<u64>, Vec<u64>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(1u64..1_500_000, n).prop_map(|gaps| {
                gaps.iter()
                    .scan(0, |t, g| {
                        *t += g;
                        Some(*t)
                    })
                    .collect()
            }),
            prop::collection::vec(0u64..1_000_000, n),
            prop::collection::vec(0u64..1_000_000, n),
        )
    })
}

fn fifo_rules() -> RuleSet {
    RuleSet::new(WINDOW, vec![rule(RuleKind::Ord, "api_create", &["sched_pick", "worker_done"])])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn aligned_counts_raise_no_alert((starts, a, b) in arb_starts()) {
        let events = aligned_sessions(&starts, &a, &b);
        prop_assume!(events.chunks(3).all(|s| s[2].ts_us - s[0].ts_us <= WINDOW));
        let alerts = monitor_trace(&fifo_rules(), &Trace::new("t", events), MonitorOptions::default()).unwrap();
        prop_assert!(alerts.is_empty(), "{alerts:?}");
    }

    #[test]
    fn deficit_alerts_its_instance_once(n in 1usize..8, victim in 0usize..8, drop_second in any::<bool>()) {
        let victim = victim % n;
        // sessions spaced beyond the window never overlap
        let starts: Vec<u64> = (0..n as u64).map(|i| i * (WINDOW + 2_000_000)).collect();
        let mut events = aligned_sessions(&starts, &vec![500_000; n], &vec![500_000; n]);
        let kept_b = events[3 * victim + 2].ts_us;
        events.remove(3 * victim + if drop_second { 2 } else { 1 });
        let alerts = monitor_trace(&fifo_rules(), &Trace::new("t", events), MonitorOptions::default()).unwrap();
        let occurrence = victim as u64 + 1;
        let own: Vec<_> = alerts.iter().filter(|a| a.occurrence == occurrence).collect();
        prop_assert_eq!(own.len(), 1);
        // a missing last event times out at the deadline; a missing middle one surfaces as soon
        // as the last event overtakes it
        let expected_ts = if drop_second { starts[victim] + WINDOW } else { kept_b };
        prop_assert_eq!(own[0].ts_us, expected_ts);
        prop_assert!(alerts.iter().all(|a| a.occurrence >= occurrence));
        prop_assert_eq!(alerts[0].occurrence, occurrence);
        if victim == n - 1 {
            prop_assert_eq!(alerts.len(), 1);
        }
    }
}
