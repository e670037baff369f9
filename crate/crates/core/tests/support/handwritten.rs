//! Five small hand-written traces covering interleaved sessions, cross-field propagation, the
//! inclusive window boundary, reordered and repeated body events and single-event operations.
//!
//! Every RPC carries a constant `host` and a unique `msg` decoy besides the correlation fields
//! `req` and `greq`. Timestamps are in seconds scaled to microseconds; the window is 10 s.

use std::collections::{BTreeMap, BTreeSet};

use rulewatch::event::{Event, Trace};

pub const DELTA_T_US: u64 = 10_000_000;

pub fn fields() -> BTreeSet<String> {
    ["req", "greq"].into_iter().map(String::from).collect()
}

/// `(second, type, req, greq)`; `cli-<method>:<status>` stands for a REST call.
type Row = (u64, &'static str, &'static str, &'static str);

fn build(id: &str, rows: &[Row]) -> Trace {
    let events = rows
        .iter()
        .enumerate()
        .map(|(i, &(s, name, req, greq))| {
            let ts = s * 1_000_000;
            if let Some(status) = name.strip_prefix("cli-") {
                let (method, code) = status.split_once(':').unwrap();
                return Event::rest(ts, format!("cli_{method}").parse().unwrap(), code.parse().unwrap());
            }
            let mut body = BTreeMap::from([
                ("host".to_string(), "node-1".to_string()),
                ("msg".to_string(), format!("{id}-{i}")),
            ]);
            if !req.is_empty() {
                body.insert("req".into(), req.into());
            }
            if !greq.is_empty() {
                body.insert("greq".into(), greq.into());
            }
            Event::rpc(ts, name.parse().unwrap(), body)
        })
        .collect();
    Trace::new(id, events)
}

pub fn traces() -> Vec<Trace> {
    vec![
        build(
            "hw-1",
            &[
                (0, "cli-post:202", "", ""),
                (1, "api_create", "a1", ""),
                (2, "sched_pick", "a1", ""),
                (3, "api_create", "b1", ""),
                (4, "worker_build", "a2", "a1"),
                (5, "sched_pick", "b1", ""),
                (6, "worker_build", "b2", "b1"),
                (7, "worker_done", "a2", ""),
                (9, "worker_done", "b2", ""),
                (12, "net_create", "n1", ""),
                (13, "agent_dhcp", "n1", ""),
                (14, "agent_l3", "n1", ""),
                (20, "vm_ping", "p1", ""),
                (21, "ovs_sg", "p1", ""),
                (22, "ovs_sg", "p1", ""),
                (23, "ovs_sg", "p1", ""),
                (25, "disk_delete", "d1", ""),
                (26, "cli-get:200", "", ""),
            ],
        ),
        build(
            "hw-2",
            &[
                (1, "api_create", "c1", ""),
                (2, "sched_pick", "c1", ""),
                (3, "worker_build", "c2", "c1"),
                (5, "worker_done", "c2", ""),
                (8, "net_create", "n2", ""),
                (9, "agent_l3", "n2", ""),
                (10, "agent_dhcp", "n2", ""),
                (15, "vm_ping", "p2", ""),
                (16, "ovs_sg", "p2", ""),
                (17, "ovs_sg", "p2", ""),
                (18, "ovs_sg", "p2", ""),
                (19, "ovs_sg", "p2", ""),
                (20, "ovs_sg", "p2", ""),
                (22, "disk_delete", "d2", ""),
                (23, "api_create", "e1", ""),
                (24, "sched_pick", "e1", ""),
                (26, "worker_build", "e2", "e1"),
                (33, "worker_done", "e2", ""),
                (40, "audit_log", "e1", ""),
                (41, "cli-delete:500", "", ""),
            ],
        ),
        build(
            "hw-3",
            &[
                (1, "net_create", "n3", ""),
                (2, "agent_dhcp", "n3", ""),
                (3, "agent_l3", "n3", ""),
                (4, "api_create", "f1", ""),
                (5, "sched_pick", "f1", ""),
                (6, "worker_build", "f2", "f1"),
                (7, "worker_done", "f2", ""),
                (8, "vm_ping", "p3", ""),
                (9, "ovs_sg", "p3", ""),
                (10, "ovs_sg", "p3", ""),
                (11, "ovs_sg", "p3", ""),
                (12, "ovs_sg", "p3", ""),
                (13, "disk_delete", "d3", ""),
                (14, "audit_log", "f1", ""),
                (14, "disk_delete", "d4", ""),
            ],
        ),
        build(
            "hw-4",
            &[
                (1, "net_create", "n4", ""),
                (2, "net_create", "n5", ""),
                (3, "agent_dhcp", "n5", ""),
                (4, "agent_l3", "n4", ""),
                (5, "agent_dhcp", "n4", ""),
                (6, "agent_l3", "n5", ""),
                (7, "api_create", "g1", ""),
                (8, "sched_pick", "g1", ""),
                (9, "worker_build", "g2", "g1"),
                (11, "worker_done", "g2", ""),
                (12, "vm_ping", "p4", ""),
                (13, "ovs_sg", "p4", ""),
                (14, "ovs_sg", "p4", ""),
                (15, "ovs_sg", "p4", ""),
                (16, "ovs_sg", "p4", ""),
                (17, "ovs_sg", "p4", ""),
                (18, "ovs_sg", "p4", ""),
                (19, "disk_delete", "d5", ""),
            ],
        ),
        build(
            "hw-5",
            &[
                (1, "api_create", "h1", ""),
                (2, "sched_pick", "h1", ""),
                (3, "worker_build", "h2", "h1"),
                (4, "sec_update", "s1", "h2"),
                (5, "worker_done", "h2", ""),
                (6, "net_create", "n6", ""),
                (7, "agent_dhcp", "n6", ""),
                (8, "agent_l3", "n6", ""),
                (9, "vm_ping", "p5", ""),
                (10, "ovs_sg", "p5", ""),
                (11, "ovs_sg", "p5", ""),
                (12, "disk_delete", "d6", ""),
                (13, "cli-post:500", "", ""),
            ],
        ),
    ]
}
