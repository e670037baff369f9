//! Traced events: the vocabulary shared by the miner, the monitor and the simulator.
//!
//! An event is one traced communication (RPC or REST) observed by the collector. Events carry
//! no propagated session identifier; correlation happens later through body field values.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `<service, method>` pair, e.g. `<cinder-scheduler, create_volume>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventType {
    service: String,
    method: String,
}

impl EventType {
    pub fn new(service: impl Into<String>, method: impl Into<String>) -> Result<Self> {
        let service = service.into();
        let method = method.into();
        for (what, s) in [("service", &service), ("method", &method)] {
            if s.is_empty() {
                return Err(Error::InvalidEventType(format!("empty {what}")));
            }
            if s.contains('\n') || s.contains('\r') {
                return Err(Error::InvalidEventType(format!("{what} contains a newline: {s:?}")));
            }
        }
        Ok(EventType { service, method })
    }

    pub fn service(&self) -> &str {
        &self.service
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    /// `service` + "_" + `method`.
    pub fn canonical_name(&self) -> String {
        format!("{}_{}", self.service, self.method)
    }

    /// Parses a canonical name using a registry of known service names. The longest registered
    /// service that prefixes the name (followed by `_`) wins; without a match the name is split
    /// at its first underscore.
    pub fn parse_with<'a, I>(name: &str, services: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let best = services
            .into_iter()
            .filter(|s| {
                name.len() > s.len() + 1
                    && name.starts_with(s)
                    && name.as_bytes()[s.len()] == b'_'
            })
            .max_by_key(|s| s.len());
        match best {
            Some(service) => EventType::new(service, &name[service.len() + 1..]),
            None => name.parse(),
        }
    }
}

impl FromStr for EventType {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        match name.split_once('_') {
            Some((service, method)) => EventType::new(service, method),
            None => Err(Error::InvalidEventType(format!(
                "`{name}` is not of the form service_method"
            ))),
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.service, self.method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Rpc,
    Rest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatusClass {
    Ok,
    ClientError,
    ServerError,
    NotRest,
}

impl StatusClass {
    pub fn is_error(self) -> bool {
        matches!(self, StatusClass::ClientError | StatusClass::ServerError)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub ts_us: u64,
    pub kind: EventKind,
    pub etype: EventType,
    /// HTTP status; present iff `kind` is REST.
    pub status: Option<u16>,
    pub body: BTreeMap<String, String>,
}

impl Event {
    pub fn rpc(ts_us: u64, etype: EventType, body: BTreeMap<String, String>) -> Self {
        Event {
            ts_us,
            kind: EventKind::Rpc,
            etype,
            status: None,
            body,
        }
    }

    pub fn rest(ts_us: u64, etype: EventType, status: u16) -> Self {
        Event {
            ts_us,
            kind: EventKind::Rest,
            etype,
            status: Some(status),
            body: BTreeMap::new(),
        }
    }

    pub fn is_rpc(&self) -> bool {
        self.kind == EventKind::Rpc
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.status) {
            (EventKind::Rest, Some(s)) if !(100..=599).contains(&s) => Err(Error::InvalidEvent(
                format!("status {s} outside 100..=599"),
            )),
            (EventKind::Rest, None) => Err(Error::InvalidEvent("REST event without status".into())),
            (EventKind::Rpc, Some(_)) => Err(Error::InvalidEvent("RPC event with status".into())),
            (EventKind::Rest, Some(_)) if !self.body.is_empty() => {
                Err(Error::InvalidEvent("REST event with a body".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn status_class(&self) -> StatusClass {
        match (self.kind, self.status) {
            (EventKind::Rest, Some(400..=499)) => StatusClass::ClientError,
            (EventKind::Rest, Some(500..=599)) => StatusClass::ServerError,
            (EventKind::Rest, _) => StatusClass::Ok,
            (EventKind::Rpc, _) => StatusClass::NotRest,
        }
    }
}

/// Events of one execution, ordered by collector timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub trace_id: String,
    pub events: Vec<Event>,
}

impl Trace {
    /// Builds a trace, stable-sorting the events by timestamp.
    pub fn new(trace_id: impl Into<String>, mut events: Vec<Event>) -> Self {
        events.sort_by_key(|e| e.ts_us);
        Trace {
            trace_id: trace_id.into(),
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Canonical type names in timestamp order.
    pub fn type_names(&self) -> Vec<String> {
        self.events.iter().map(|e| e.etype.canonical_name()).collect()
    }

    /// Distinct service names observed in the trace.
    pub fn services(&self) -> std::collections::BTreeSet<&str> {
        self.events.iter().map(|e| e.etype.service()).collect()
    }

    pub fn last_ts(&self) -> Option<u64> {
        self.events.last().map(|e| e.ts_us)
    }
}
