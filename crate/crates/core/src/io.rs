//! Loading and persisting traces, rule sets, alert streams and experiment records.
//!
//! Every loader is fail-fast: malformed input is rejected with the offending line, never repaired.
//! Traces and alerts are JSON Lines; rule sets and experiment records are single JSON documents.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::alert::FailureAlert;
use crate::error::{Error, Result};
use crate::event::{Event, EventKind, EventType, Trace};
use crate::rules::{MonitoringRule, RuleKind, RuleSet};
use crate::sim::{FaultSpec, Manifestation};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const EXPERIMENT_FILE: &str = "experiment.json";

pub fn alerts_file_name(approach: &str) -> String {
    format!("alerts.{approach}.jsonl")
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------------------------

#[derive(Serialize)]
struct EventRecord<'a> {
    ts_us: u64,
    kind: EventKind,
    service: &'a str,
    method: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<u16>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    body: &'a BTreeMap<String, String>,
}

/// Serializes one event as a canonical trace line (no trailing newline).
pub fn event_to_line(event: &Event) -> String {
    let record = EventRecord {
        ts_us: event.ts_us,
        kind: event.kind,
        service: event.etype.service(),
        method: event.etype.method(),
        status: event.status,
        body: &event.body,
    };
    serde_json::to_string(&record).expect("event records always serialize")
}

/// Parses and validates one trace line. `line` is 1-based and only used for diagnostics.
pub fn parse_event_line(text: &str, path: &Path, line: usize) -> Result<Event> {
    let violation = |field: &str, message: &str| Error::SchemaViolation {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message: message.to_string(),
    };
    let value: Value = serde_json::from_str(text).map_err(|e| Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(Error::MalformedLine {
            path: path.to_path_buf(),
            line,
            message: "record is not an object".into(),
        });
    };
    for key in obj.keys() {
        if !matches!(
            key.as_str(),
            "ts_us" | "kind" | "service" | "method" | "status" | "body"
        ) {
            return Err(violation(key, "unknown field"));
        }
    }
    let ts_us = obj
        .get("ts_us")
        .ok_or_else(|| violation("ts_us", "missing"))?
        .as_u64()
        .ok_or_else(|| violation("ts_us", "expected a non-negative integer"))?;
    let kind = match obj.get("kind").and_then(Value::as_str) {
        Some("rpc") => EventKind::Rpc,
        Some("rest") => EventKind::Rest,
        Some(_) => return Err(violation("kind", "expected \"rpc\" or \"rest\"")),
        None => return Err(violation("kind", "missing or not a string")),
    };
    let string_field = |name: &str| -> Result<&str> {
        obj.get(name)
            .and_then(Value::as_str)
            .ok_or_else(|| violation(name, "missing or not a string"))
    };
    let service = string_field("service")?;
    let method = string_field("method")?;
    let etype =
        EventType::new(service, method).map_err(|e| violation("service/method", &e.to_string()))?;

    let status = match obj.get("status") {
        None => None,
        Some(v) => {
            let s = v
                .as_u64()
                .filter(|s| (100..=599).contains(s))
                .ok_or_else(|| violation("status", "expected an integer in 100..=599"))?;
            Some(s as u16)
        }
    };
    let body = match obj.get("body") {
        None => BTreeMap::new(),
        Some(Value::Object(map)) => string_map(map).ok_or_else(|| {
            violation("body", "expected an object with string values")
        })?,
        Some(_) => return Err(violation("body", "expected an object")),
    };
    match kind {
        EventKind::Rpc if status.is_some() => {
            return Err(violation("status", "RPC events carry no status"))
        }
        EventKind::Rest if status.is_none() => {
            return Err(violation("status", "REST events require a status"))
        }
        EventKind::Rest if obj.contains_key("body") => {
            return Err(violation("body", "REST events carry no body"))
        }
        _ => {}
    }
    Ok(Event {
        ts_us,
        kind,
        etype,
        status,
        body,
    })
}

fn string_map(map: &Map<String, Value>) -> Option<BTreeMap<String, String>> {
    map.iter()
        .map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_string())))
        .collect()
}

/// Parses trace text. Blank lines are only tolerated at the very end of the text.
pub fn parse_trace(text: &str, trace_id: &str, path: &Path) -> Result<Trace> {
    let mut events = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    let last_content = lines.iter().rposition(|l| !l.trim().is_empty());
    for (i, line) in lines.iter().enumerate() {
        if last_content.is_none_or(|last| i > last) {
            break;
        }
        events.push(parse_event_line(line, path, i + 1)?);
    }
    Ok(Trace::new(trace_id, events))
}

/// Identifier derived from a trace path: the parent directory for `trace.jsonl`, else the stem.
pub fn trace_id_for(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if path.file_name().is_some_and(|n| n == TRACE_FILE) {
        if let Some(dir) = path.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    parse_trace(&text, &trace_id_for(path), path)
}

pub fn trace_to_string(trace: &Trace) -> String {
    let mut out = String::with_capacity(trace.len() * 256);
    for event in &trace.events {
        out.push_str(&event_to_line(event));
        out.push('\n');
    }
    out
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), trace_to_string(trace).as_bytes())
}

/// Every `*.jsonl` file directly inside `dir`, in file-name order.
pub fn trace_paths(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_traces_dir(dir: impl AsRef<Path>) -> Result<Vec<Trace>> {
    trace_paths(dir)?.iter().map(load_trace).collect()
}

// ---------------------------------------------------------------------------------------------
// Rule sets
// ---------------------------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSetFile {
    delta_t_us: u64,
    rules: Vec<RuleRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleRecord {
    id: String,
    kind: RuleKind,
    head: String,
    body: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    counts: BTreeMap<String, [u32; 2]>,
}

pub fn ruleset_to_string(rules: &RuleSet) -> String {
    let file = RuleSetFile {
        delta_t_us: rules.delta_t_us,
        rules: rules
            .rules
            .iter()
            .map(|r| RuleRecord {
                id: r.id.clone(),
                kind: r.kind,
                head: r.head.canonical_name(),
                body: r.body.iter().map(EventType::canonical_name).collect(),
                counts: r
                    .counts
                    .iter()
                    .map(|(t, &(lo, hi))| (t.canonical_name(), [lo, hi]))
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("rule sets always serialize");
    s.push('\n');
    s
}

pub fn write_ruleset(rules: &RuleSet, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), ruleset_to_string(rules).as_bytes())
}

pub fn parse_ruleset(text: &str, path: &Path) -> Result<RuleSet> {
    let violation = |line: usize, field: &str, message: String| Error::SchemaViolation {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    };
    let file: RuleSetFile =
        serde_json::from_str(text).map_err(|e| violation(e.line(), "rules", e.to_string()))?;
    let parse_type = |name: &str, field: &str| -> Result<EventType> {
        name.parse().map_err(|e: Error| violation(0, field, e.to_string()))
    };
    let mut rules = Vec::with_capacity(file.rules.len());
    for record in file.rules {
        let head = parse_type(&record.head, "head")?;
        let body = record
            .body
            .iter()
            .map(|n| parse_type(n, "body"))
            .collect::<Result<Vec<_>>>()?;
        let counts = record
            .counts
            .iter()
            .map(|(n, [lo, hi])| Ok((parse_type(n, "counts")?, (*lo, *hi))))
            .collect::<Result<BTreeMap<_, _>>>()?;
        rules.push(MonitoringRule {
            id: record.id,
            kind: record.kind,
            head,
            body,
            counts,
            delta_t_us: file.delta_t_us,
        });
    }
    let set = RuleSet::new(file.delta_t_us, rules);
    set.validate()
        .map_err(|e| violation(0, "rules", e.to_string()))?;
    Ok(set)
}

pub fn load_ruleset(path: impl AsRef<Path>) -> Result<RuleSet> {
    let path = path.as_ref();
    parse_ruleset(&read_to_string(path)?, path)
}

// ---------------------------------------------------------------------------------------------
// Alerts
// ---------------------------------------------------------------------------------------------

pub fn alerts_to_string(alerts: &[FailureAlert]) -> String {
    let mut out = String::new();
    for alert in alerts {
        out.push_str(&serde_json::to_string(alert).expect("alerts always serialize"));
        out.push('\n');
    }
    out
}

pub fn write_alerts(alerts: &[FailureAlert], path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), alerts_to_string(alerts).as_bytes())
}

pub fn parse_alert_line(text: &str, path: &Path, line: usize) -> Result<FailureAlert> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Strict {
        rule_id: String,
        violation: crate::alert::Violation,
        ts_us: u64,
        occurrence: u64,
    }
    let s: Strict = serde_json::from_str(text).map_err(|e| {
        if e.is_syntax() || e.is_eof() {
            Error::MalformedLine {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            }
        } else {
            Error::SchemaViolation {
                path: path.to_path_buf(),
                line,
                field: "alert".into(),
                message: e.to_string(),
            }
        }
    })?;
    Ok(FailureAlert {
        rule_id: s.rule_id,
        violation: s.violation,
        ts_us: s.ts_us,
        occurrence: s.occurrence,
    })
}

pub fn load_alerts(path: impl AsRef<Path>) -> Result<Vec<FailureAlert>> {
    let path = path.as_ref();
    read_to_string(path)?
        .lines()
        .enumerate()
        .map(|(i, l)| parse_alert_line(l, path, i + 1))
        .collect()
}

// ---------------------------------------------------------------------------------------------
// Experiment records
// ---------------------------------------------------------------------------------------------

/// Ground truth of one experiment as persisted next to its trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecord {
    pub trace_path: String,
    pub t_start_us: u64,
    pub fault: Option<FaultSpec>,
    pub first_failure_us: Option<u64>,
    /// How the injected fault manifested in the trace; absent for hand-made records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifestation: Option<Manifestation>,
}

impl ExperimentRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if let Some(t) = self.first_failure_us {
            if self.fault.is_none() {
                return Err("first_failure_us requires a fault".into());
            }
            if t < self.t_start_us {
                return Err("first_failure_us precedes t_start_us".into());
            }
        }
        Ok(())
    }
}

pub fn experiment_to_string(record: &ExperimentRecord) -> String {
    let mut s = serde_json::to_string_pretty(record).expect("experiment records always serialize");
    s.push('\n');
    s
}

pub fn write_experiment(record: &ExperimentRecord, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), experiment_to_string(record).as_bytes())
}

pub fn load_experiment(path: impl AsRef<Path>) -> Result<ExperimentRecord> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let record: ExperimentRecord =
        serde_json::from_str(&text).map_err(|e| Error::SchemaViolation {
            path: path.to_path_buf(),
            line: e.line(),
            field: "experiment".into(),
            message: e.to_string(),
        })?;
    record.validate().map_err(|message| Error::SchemaViolation {
        path: path.to_path_buf(),
        line: 0,
        field: "first_failure_us".into(),
        message,
    })?;
    Ok(record)
}

/// Experiment directories (those containing a trace) directly inside `dir`, sorted by name.
pub fn experiment_dirs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(TRACE_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}
