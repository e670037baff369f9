//! Multi-tenant workload simulator and fault injector producing labeled traces.
//!
//! Each tenant loops over the operations of its profile. Operations expand their catalog
//! templates into one REST call followed by RPC events grouped by request id; sub-requests carry
//! the originating request id in a second field. That request id doubles as the hidden session
//! id kept in [`GroundTruth`], which never reaches the miner or the monitor.
//!
//! Every tenant draws from its own random stream, so injecting a fault into one operation leaves
//! the rest of the schedule untouched.

mod campaign;
mod catalog;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, EventType, Trace};

pub use campaign::{campaign, corpus, write_corpus};
pub use catalog::{BackgroundTemplate, Catalog, FieldCatalog, OpTemplate, Profile, RestTemplate, StepTemplate};

pub const DEFAULT_START_US: u64 = 1_700_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultKind {
    ThrowException,
    WrongReturn,
    WrongParam,
}

impl FaultKind {
    pub const ALL: [FaultKind; 3] = [FaultKind::ThrowException, FaultKind::WrongReturn, FaultKind::WrongParam];
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultKind::ThrowException => "THROW_EXCEPTION",
            FaultKind::WrongReturn => "WRONG_RETURN",
            FaultKind::WrongParam => "WRONG_PARAM",
        })
    }
}

impl FromStr for FaultKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FaultKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown fault kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target_op: String,
    pub target_tenant: usize,
    pub activation_us: u64,
}

/// What an injected fault did to the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Manifestation {
    Benign,
    /// Events removed from the target operation, in their original order, and the time of the
    /// REST error response if one was emitted.
    Truncation {
        missing: Vec<String>,
        rest_error_us: Option<u64>,
    },
    /// Two downstream events that traded timestamps; `first` was originally earlier.
    Swap { first: String, second: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub t_start_us: u64,
    pub fault: Option<FaultSpec>,
    pub first_failure_us: Option<u64>,
    pub manifestation: Option<Manifestation>,
    /// Hidden session id of every trace event, by position.
    pub session_map: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub tenants: usize,
    /// Profile of each tenant; tenant `i` uses entry `i % len`.
    pub assignment: Vec<String>,
    pub duration_us: u64,
    /// Stop each tenant after this many passes over its profile.
    pub max_rounds: Option<u32>,
    pub seed: u64,
    pub start_us: u64,
    /// Upper bound on the span of one fault-free operation.
    pub max_span_us: u64,
    /// Pause between consecutive operations of one tenant, milliseconds.
    pub think_time_ms: [u64; 2],
    pub benign_probability: f64,
    /// Delay between fault activation and the REST error seen by the client, milliseconds.
    pub rest_error_delay_ms: [u64; 2],
    pub catalog: Catalog,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        let catalog = Catalog::default();
        WorkloadConfig {
            tenants: 10,
            assignment: catalog.default_assignment.clone(),
            duration_us: 40 * 60 * 1_000_000,
            max_rounds: None,
            seed: 0,
            start_us: DEFAULT_START_US,
            max_span_us: 34_000_000,
            think_time_ms: [20_000, 95_000],
            benign_probability: 0.2,
            rest_error_delay_ms: [30_000, 40_000],
            catalog,
        }
    }
}

impl WorkloadConfig {
    pub fn with_seed(seed: u64) -> Self {
        WorkloadConfig {
            seed,
            ..Default::default()
        }
    }

    /// A single workload run as used by fault-injection experiments: every tenant executes its
    /// profile once.
    pub fn experiment(seed: u64) -> Self {
        WorkloadConfig {
            max_rounds: Some(1),
            seed,
            ..Default::default()
        }
    }

    /// One tenant running `profile`, so operations never overlap.
    pub fn single_tenant(profile: &str, seed: u64) -> Self {
        WorkloadConfig {
            tenants: 1,
            assignment: vec![profile.to_string()],
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.catalog.validate()?;
        if self.tenants > 0 && self.assignment.is_empty() {
            return bad("no profile assignment".into());
        }
        if let Some(p) = self.assignment.iter().find(|p| self.catalog.profile(p).is_none()) {
            return bad(format!("unknown profile {p}"));
        }
        if self.think_time_ms[0] > self.think_time_ms[1] || self.rest_error_delay_ms[0] > self.rest_error_delay_ms[1] {
            return bad("inverted delay range".into());
        }
        if self.max_span_us == 0 {
            return bad("max_span_us must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.benign_probability) {
            return bad(format!("benign probability {} outside [0, 1]", self.benign_probability));
        }
        Ok(())
    }

    fn profile_of(&self, tenant: usize) -> &Profile {
        let name = &self.assignment[tenant % self.assignment.len()];
        self.catalog.profile(name).expect("validated assignment")
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream))
}

fn uuid(rng: &mut impl Rng) -> String {
    let v: u128 = rng.gen();
    let h = format!("{v:032x}");
    format!("{}-{}-{}-{}-{}", &h[..8], &h[8..12], &h[12..16], &h[16..20], &h[20..])
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [u64; 2]) -> u64 {
    rng.gen_range(lo..=hi)
}

/// One executed operation with its events in timestamp order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledOp {
    pub tenant: usize,
    pub op: String,
    pub session: String,
    pub events: Vec<Event>,
    /// Position of the closing REST call in `events`, if the template has one.
    pub rest_end: Option<usize>,
    /// Whether each event came from a mandatory step, as generated.
    pub required: Vec<bool>,
}

impl ScheduledOp {
    pub fn start_us(&self) -> u64 {
        self.events.first().map_or(0, |e| e.ts_us)
    }

    pub fn end_us(&self) -> u64 {
        self.events.last().map_or(0, |e| e.ts_us)
    }

    /// Positions of the RPC events within `events`.
    pub fn rpc_positions(&self) -> Vec<usize> {
        (0..self.events.len()).filter(|&i| self.events[i].is_rpc()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub ops: Vec<ScheduledOp>,
    /// Periodic service events, each its own session.
    pub background: Vec<(Event, String)>,
}

struct TenantState {
    rng: ChaCha8Rng,
    identity: BTreeMap<String, String>,
    resources: BTreeMap<String, String>,
    cursor: usize,
    rounds: u32,
}

impl TenantState {
    fn new(config: &WorkloadConfig, tenant: usize) -> Self {
        let mut rng = rng_for(config.seed, tenant as u64 + 1);
        let identity = config
            .catalog
            .fields
            .per_tenant
            .iter()
            .map(|f| (f.clone(), format!("{:032x}", rng.gen::<u128>())))
            .collect();
        TenantState {
            rng,
            identity,
            resources: BTreeMap::new(),
            cursor: 0,
            rounds: 0,
        }
    }
}

fn rpc_body(
    fields: &FieldCatalog,
    rng: &mut impl Rng,
    identity: &BTreeMap<String, String>,
    resource: Option<(&str, &str)>,
    request: &str,
    global: Option<&str>,
) -> BTreeMap<String, String> {
    let mut body = fields.constants.clone();
    body.extend(identity.iter().map(|(k, v)| (k.clone(), v.clone())));
    for f in &fields.noise {
        body.insert(f.clone(), format!("{:016x}{:08x}", rng.gen::<u64>(), rng.gen::<u32>()));
    }
    if let Some((k, v)) = resource {
        body.insert(k.to_string(), v.to_string());
    }
    body.insert(fields.request.clone(), format!("req-{request}"));
    if let Some(g) = global {
        body.insert(fields.global_request.clone(), format!("req-{g}"));
    }
    body
}

fn expand_op(config: &WorkloadConfig, tenant: usize, state: &mut TenantState, template: &OpTemplate, t0: u64) -> ScheduledOp {
    let rng = &mut state.rng;
    let fields = &config.catalog.fields;
    let root = uuid(rng);

    let mut steps: Vec<&StepTemplate> = template
        .steps
        .iter()
        .filter(|s| {
            let draw: f64 = rng.gen();
            draw < s.probability || s.is_mandatory()
        })
        .collect();
    let mut tags: Vec<&str> = steps.iter().filter_map(|s| s.shuffle.as_deref()).collect();
    tags.sort_unstable();
    tags.dedup();
    for tag in tags {
        let slots: Vec<usize> = (0..steps.len()).filter(|&i| steps[i].shuffle.as_deref() == Some(tag)).collect();
        let mut members: Vec<&StepTemplate> = slots.iter().map(|&i| steps[i]).collect();
        members.shuffle(rng);
        for (slot, m) in slots.into_iter().zip(members) {
            steps[slot] = m;
        }
    }

    let mut groups: BTreeMap<u32, String> = BTreeMap::new();
    groups.insert(0, root.clone());
    // (offset from t0, type, group id, is sub-request, mandatory)
    let mut planned: Vec<(u64, EventType, String, bool, bool)> = Vec::new();
    let mut offset = 0u64;
    for step in steps {
        let copies = step.repeat.map_or(1, |[lo, hi]| rng.gen_range(lo..=hi));
        let id = groups.entry(step.group).or_insert_with(|| uuid(rng)).clone();
        let etype: EventType = step.event.parse().expect("validated catalog");
        for _ in 0..copies {
            offset += uniform(rng, step.delay_ms) * 1000;
            planned.push((offset, etype.clone(), id.clone(), step.group != 0, step.is_mandatory()));
        }
    }
    let end_offset = template.rest_end.as_ref().map(|_| offset + rng.gen_range(200..=1000) * 1000);
    let total = end_offset.unwrap_or(offset);
    let scale = |o: u64| {
        if total > config.max_span_us {
            (o as u128 * config.max_span_us as u128 / total as u128) as u64
        } else {
            o
        }
    };

    let resource = template
        .resource
        .as_deref()
        .map(|r| (r, state.resources.entry(r.to_string()).or_insert_with(|| uuid(rng)).clone()));
    let mut events = vec![Event::rest(t0, template.rest_start.event.parse().expect("validated catalog"), template.rest_start.status)];
    let mut required = vec![true];
    for (o, etype, id, sub, mandatory) in planned {
        let body = rpc_body(
            fields,
            rng,
            &state.identity,
            resource.as_ref().map(|(k, v)| (*k, v.as_str())),
            &id,
            sub.then_some(root.as_str()),
        );
        events.push(Event::rpc(t0 + scale(o), etype, body));
        required.push(mandatory);
    }
    let mut rest_end = None;
    if let (Some(end), Some(o)) = (&template.rest_end, end_offset) {
        rest_end = Some(events.len());
        events.push(Event::rest(t0 + scale(o), end.event.parse().expect("validated catalog"), end.status));
        required.push(true);
    }
    ScheduledOp {
        tenant,
        op: template.name.clone(),
        session: format!("req-{root}"),
        events,
        rest_end,
        required,
    }
}

/// Builds the full fault-free schedule.
pub fn schedule(config: &WorkloadConfig) -> Result<Schedule> {
    config.validate()?;
    let end = config.start_us + config.duration_us;
    let mut tenants: Vec<TenantState> = (0..config.tenants).map(|t| TenantState::new(config, t)).collect();
    let mut queue = BinaryHeap::new();
    for (t, state) in tenants.iter_mut().enumerate() {
        let first = config.start_us + uniform(&mut state.rng, [0, config.think_time_ms[1]]) * 1000;
        queue.push(Reverse((first, t)));
    }
    let mut ops = Vec::new();
    while let Some(Reverse((at, t))) = queue.pop() {
        if at >= end {
            continue;
        }
        let profile = config.profile_of(t);
        let state = &mut tenants[t];
        if state.cursor == 0 {
            if config.max_rounds.is_some_and(|m| state.rounds >= m) {
                continue;
            }
            state.rounds += 1;
            state.resources.clear();
        }
        let template = config.catalog.op(&profile.ops[state.cursor]).expect("validated profile");
        state.cursor = (state.cursor + 1) % profile.ops.len();
        let op = expand_op(config, t, state, template, at);
        let next = op.end_us() + uniform(&mut state.rng, config.think_time_ms) * 1000;
        ops.push(op);
        queue.push(Reverse((next, t)));
    }

    let mut background = Vec::new();
    if config.tenants > 0 {
        let mut rng = rng_for(config.seed, 0xb6);
        let identity = BTreeMap::new();
        for b in &config.catalog.background {
            let etype: EventType = b.event.parse().expect("validated catalog");
            let period = [(b.period_s[0] * 1e6) as u64, (b.period_s[1] * 1e6) as u64];
            let mut t = config.start_us + uniform(&mut rng, [0, period[0]]);
            while t < end {
                let id = uuid(&mut rng);
                let body = rpc_body(&config.catalog.fields, &mut rng, &identity, None, &id, None);
                background.push((Event::rpc(t, etype.clone(), body), format!("req-{id}")));
                t += uniform(&mut rng, period);
            }
        }
    }
    Ok(Schedule { ops, background })
}

fn flatten(schedule: &Schedule, trace_id: String) -> (Trace, Vec<String>) {
    let mut tagged: Vec<(&Event, &str)> = schedule
        .ops
        .iter()
        .flat_map(|op| op.events.iter().map(move |e| (e, op.session.as_str())))
        .chain(schedule.background.iter().map(|(e, s)| (e, s.as_str())))
        .collect();
    tagged.sort_by_key(|(e, _)| e.ts_us);
    let sessions = tagged.iter().map(|(_, s)| s.to_string()).collect();
    let events = tagged.into_iter().map(|(e, _)| e.clone()).collect();
    (Trace::new(trace_id, events), sessions)
}

fn trace_id(config: &WorkloadConfig) -> String {
    format!("sim-{}", config.seed)
}

/// Fault-free trace for `config`.
pub fn generate(config: &WorkloadConfig) -> Result<(Trace, GroundTruth)> {
    let s = schedule(config)?;
    let (trace, session_map) = flatten(&s, trace_id(config));
    Ok((
        trace,
        GroundTruth {
            t_start_us: config.start_us,
            fault: None,
            first_failure_us: None,
            manifestation: None,
            session_map,
        },
    ))
}

fn locate(schedule: &Schedule, fault: &FaultSpec) -> Result<usize> {
    schedule
        .ops
        .iter()
        .position(|o| {
            o.tenant == fault.target_tenant
                && o.op == fault.target_op
                && o.start_us() <= fault.activation_us
                && fault.activation_us <= o.end_us()
        })
        .ok_or_else(|| {
            Error::UnknownTarget(format!(
                "no {} operation of tenant {} spans {} us",
                fault.target_op, fault.target_tenant, fault.activation_us
            ))
        })
}

fn truncate(op: &mut ScheduledOp, from: usize, rest_error: Option<(u64, u16)>) -> (u64, Manifestation) {
    let rpcs = op.rpc_positions();
    let removed: Vec<usize> = rpcs[from..].to_vec();
    let first_failure = op.events[removed[0]].ts_us;
    let missing = removed.iter().map(|&i| op.events[i].etype.canonical_name()).collect();
    let mut rest_error_us = None;
    if let Some((ts, status)) = rest_error {
        let etype = op.rest_end.map_or_else(|| op.events[0].etype.clone(), |i| op.events[i].etype.clone());
        if let Some(i) = op.rest_end {
            op.events[i].ts_us = u64::MAX;
        }
        op.events.push(Event::rest(ts, etype, status));
        rest_error_us = Some(ts);
    }
    for &i in &removed {
        op.events[i].ts_us = u64::MAX;
    }
    op.events.retain(|e| e.ts_us != u64::MAX);
    op.events.sort_by_key(|e| e.ts_us);
    op.rest_end = None;
    (first_failure, Manifestation::Truncation { missing, rest_error_us })
}

/// Applies a non-benign fault to the located operation; returns the first failure time.
fn manifest(
    config: &WorkloadConfig,
    op: &mut ScheduledOp,
    fault: &FaultSpec,
    rng: &mut impl Rng,
) -> (u64, Manifestation) {
    let rpcs = op.rpc_positions();
    let from = (1..rpcs.len())
        .find(|&k| op.events[rpcs[k]].ts_us >= fault.activation_us)
        .unwrap_or(rpcs.len() - 1)
        .max(1);
    match fault.kind {
        FaultKind::ThrowException => {
            let delay = uniform(rng, config.rest_error_delay_ms) * 1000;
            truncate(op, from, Some((fault.activation_us.max(op.events[rpcs[from]].ts_us) + delay, 500)))
        }
        FaultKind::WrongReturn => truncate(op, from, None),
        FaultKind::WrongParam => {
            let swap = rng.gen_bool(0.5);
            // the partner is the next downstream event every execution reaches
            let partner = rpcs[from + 1..]
                .iter()
                .copied()
                .find(|&i| op.required.get(i).copied().unwrap_or(true) && op.events[i].etype != op.events[rpcs[from]].etype);
            match partner.map(|b| (rpcs[from], b)) {
                Some((a, b)) if swap => {
                    let ta = op.events[a].ts_us;
                    op.events[a].ts_us = op.events[b].ts_us;
                    op.events[b].ts_us = ta;
                    let m = Manifestation::Swap {
                        first: op.events[a].etype.canonical_name(),
                        second: op.events[b].etype.canonical_name(),
                    };
                    op.events.sort_by_key(|e| e.ts_us);
                    op.rest_end = None;
                    (ta, m)
                }
                _ => truncate(op, from, None),
            }
        }
    }
}

pub(crate) fn inject_into(
    config: &WorkloadConfig,
    mut schedule: Schedule,
    fault: &FaultSpec,
    benign: bool,
    rng: &mut impl Rng,
) -> Result<(Trace, GroundTruth)> {
    let at = locate(&schedule, fault)?;
    let op = &mut schedule.ops[at];
    if op.rpc_positions().len() < 2 {
        return Err(Error::UnknownTarget(format!("{} has no downstream RPC events", fault.target_op)));
    }
    let (first_failure_us, manifestation) = if benign {
        (None, Manifestation::Benign)
    } else {
        let (t, m) = manifest(config, op, fault, rng);
        op.required.clear();
        (Some(t), m)
    };
    let (trace, session_map) = flatten(&schedule, trace_id(config));
    Ok((
        trace,
        GroundTruth {
            t_start_us: config.start_us,
            fault: Some(fault.clone()),
            first_failure_us,
            manifestation: Some(manifestation),
            session_map,
        },
    ))
}

/// Trace of `config` with `fault` injected; benign with the configured probability.
pub fn inject(config: &WorkloadConfig, fault: &FaultSpec) -> Result<(Trace, GroundTruth)> {
    let s = schedule(config)?;
    let mut rng = rng_for(mix(config.seed, fault.activation_us), fault.target_tenant as u64 ^ 0xfa17);
    let benign = rng.gen_bool(config.benign_probability);
    inject_into(config, s, fault, benign, &mut rng)
}
