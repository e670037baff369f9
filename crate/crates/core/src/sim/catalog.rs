//! Operation templates for the workload simulator, loaded from JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::EventType;

const DEFAULT_CATALOG: &str = include_str!("../../data/catalog.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldCatalog {
    /// Carries the id of the request group an event belongs to.
    pub request: String,
    /// Carries the id of the originating request on every spawned sub-request.
    pub global_request: String,
    pub constants: BTreeMap<String, String>,
    pub per_tenant: Vec<String>,
    /// Fields holding a fresh random value on every event.
    pub noise: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestTemplate {
    pub event: String,
    pub status: u16,
}

fn always() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepTemplate {
    pub event: String,
    /// Request group; group 0 shares the operation's root request id.
    #[serde(default)]
    pub group: u32,
    /// Delay after the previous event, milliseconds `[lo, hi]`.
    pub delay_ms: [u64; 2],
    #[serde(default = "always")]
    pub probability: f64,
    /// Steps with the same tag are emitted in a random relative order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<String>,
    /// Emit the step a uniform number of times in `[lo, hi]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<[u32; 2]>,
}

impl StepTemplate {
    pub fn is_mandatory(&self) -> bool {
        self.probability >= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpTemplate {
    pub name: String,
    pub subsystem: String,
    /// Body field naming the resource the operation works on.
    pub resource: Option<String>,
    pub rest_start: RestTemplate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_end: Option<RestTemplate>,
    pub steps: Vec<StepTemplate>,
}

impl OpTemplate {
    /// Operations a fault can target: at least one mandatory event after the first RPC.
    pub fn is_injectable(&self) -> bool {
        self.steps.len() >= 2 && self.steps[0].is_mandatory() && self.steps[1..].iter().any(StepTemplate::is_mandatory)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    pub ops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundTemplate {
    pub event: String,
    pub period_s: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub fields: FieldCatalog,
    pub operations: Vec<OpTemplate>,
    pub profiles: Vec<Profile>,
    pub default_assignment: Vec<String>,
    #[serde(default)]
    pub background: Vec<BackgroundTemplate>,
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog::from_json(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }
}

impl Catalog {
    pub fn from_json(text: &str) -> Result<Self> {
        let catalog: Catalog =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("catalog: {e}")))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Catalog::from_json(&text)
    }

    pub fn op(&self, name: &str) -> Option<&OpTemplate> {
        self.operations.iter().find(|o| o.name == name)
    }

    pub fn profile(&self, name: &str) -> Option<&Profile> {
        self.profiles.iter().find(|p| p.name == name)
    }

    pub fn injectable_ops(&self) -> BTreeSet<&str> {
        self.operations
            .iter()
            .filter(|o| o.is_injectable())
            .map(|o| o.name.as_str())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("catalog: {m}")));
        let mut names = BTreeSet::new();
        for op in &self.operations {
            if !names.insert(op.name.as_str()) {
                return bad(format!("duplicate operation {}", op.name));
            }
            op.rest_start.event.parse::<EventType>()?;
            if let Some(end) = &op.rest_end {
                end.event.parse::<EventType>()?;
            }
            for step in &op.steps {
                step.event.parse::<EventType>()?;
                if step.delay_ms[0] > step.delay_ms[1] {
                    return bad(format!("{}: delay range {:?}", step.event, step.delay_ms));
                }
                if !(0.0..=1.0).contains(&step.probability) {
                    return bad(format!("{}: probability {}", step.event, step.probability));
                }
                if let Some([lo, hi]) = step.repeat {
                    if lo == 0 || lo > hi {
                        return bad(format!("{}: repeat range [{lo}, {hi}]", step.event));
                    }
                }
            }
            if let Some(first) = op.steps.first() {
                if first.group != 0 || !first.is_mandatory() || first.shuffle.is_some() || first.repeat.is_some() {
                    return bad(format!("{}: first step must be a plain mandatory group-0 step", op.name));
                }
            }
        }
        for p in &self.profiles {
            if p.ops.is_empty() {
                return bad(format!("profile {} has no operations", p.name));
            }
            if let Some(op) = p.ops.iter().find(|o| !names.contains(o.as_str())) {
                return bad(format!("profile {} uses unknown operation {op}", p.name));
            }
        }
        if let Some(p) = self.default_assignment.iter().find(|p| self.profile(p).is_none()) {
            return bad(format!("unknown profile {p} in default assignment"));
        }
        for b in &self.background {
            b.event.parse::<EventType>()?;
            if !(b.period_s[0] > 0.0 && b.period_s[0] <= b.period_s[1]) {
                return bad(format!("{}: period {:?}", b.event, b.period_s));
            }
        }
        Ok(())
    }
}
