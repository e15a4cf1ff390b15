//! Runtime parameter system: declared ranges, validated updates, change
//! notification through version counters.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::{GraphError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Number(f64),
    Flag(bool),
    Text(String),
}

impl ParamValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            ParamValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ParamValue::Text(v) => Some(v.as_str()),
            _ => None,
        }
    }

    pub fn as_flag(&self) -> Option<bool> {
        match self {
            ParamValue::Flag(v) => Some(*v),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            ParamValue::Number(v) => format!("{v}"),
            ParamValue::Flag(v) => format!("{v}"),
            ParamValue::Text(v) => v.clone(),
        }
    }
}

/// Value domain of a parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    /// Closed interval of numbers.
    Continuous { min: f64, max: f64 },
    /// Finite set of allowed values.
    Discrete(Vec<ParamValue>),
    Flag,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    pub name: String,
    pub kind: ParamKind,
    pub default: ParamValue,
}

impl ParameterSpec {
    pub fn continuous(name: &str, min: f64, max: f64, default: f64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Continuous { min, max },
            default: ParamValue::Number(default),
        }
    }

    pub fn choice(name: &str, allowed: &[&str], default: &str) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Discrete(
                allowed
                    .iter()
                    .map(|v| ParamValue::Text((*v).into()))
                    .collect(),
            ),
            default: ParamValue::Text(default.into()),
        }
    }

    pub fn flag(name: &str, default: bool) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Flag,
            default: ParamValue::Flag(default),
        }
    }

    pub fn text(name: &str, default: &str) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Text,
            default: ParamValue::Text(default.into()),
        }
    }

    pub fn admits(&self, value: &ParamValue) -> bool {
        match (&self.kind, value) {
            (ParamKind::Continuous { min, max }, ParamValue::Number(v)) => {
                v.is_finite() && *v >= *min && *v <= *max
            }
            (ParamKind::Discrete(allowed), v) => allowed.contains(v),
            (ParamKind::Flag, ParamValue::Flag(_)) => true,
            (ParamKind::Text, ParamValue::Text(_)) => true,
            _ => false,
        }
    }

    /// Parse an XML attribute string into this parameter's value space.
    pub fn parse(&self, raw: &str) -> Option<ParamValue> {
        match self.kind {
            ParamKind::Continuous { .. } => raw.parse::<f64>().ok().map(ParamValue::Number),
            ParamKind::Discrete(_) => {
                // Discrete sets may hold numbers or names.
                if let Ok(num) = raw.parse::<f64>() {
                    let as_num = ParamValue::Number(num);
                    if self.admits(&as_num) {
                        return Some(as_num);
                    }
                }
                Some(ParamValue::Text(raw.to_string()))
            }
            ParamKind::Flag => raw.parse::<bool>().ok().map(ParamValue::Flag),
            ParamKind::Text => Some(ParamValue::Text(raw.to_string())),
        }
    }
}

/// Result of a `set_parameter` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetOutcome {
    /// Value accepted; takes effect at the next frame boundary.
    Applied,
    /// Value equals the current one; nothing changes, no caches rebuilt.
    NoOp,
}

/// Shared parameter state of one node. Workers snapshot the whole table
/// under a single lock at each frame boundary, so every frame sees one
/// consistent tuple.
#[derive(Debug)]
pub struct ParamTable {
    inner: Mutex<TableState>,
    specs: Vec<ParameterSpec>,
}

#[derive(Debug)]
struct TableState {
    current: HashMap<String, ParamValue>,
    version: u64,
}

/// One consistent view of a node's parameters.
#[derive(Debug, Clone)]
pub struct ParamSnapshot {
    pub values: HashMap<String, ParamValue>,
    pub version: u64,
}

impl ParamSnapshot {
    pub fn number(&self, name: &str) -> f64 {
        self.values
            .get(name)
            .and_then(|v| v.as_number())
            .unwrap_or_else(|| panic!("parameter {name} is not a number"))
    }

    pub fn text(&self, name: &str) -> &str {
        self.values
            .get(name)
            .and_then(|v| v.as_text())
            .unwrap_or_else(|| panic!("parameter {name} is not text"))
    }
}

impl ParamTable {
    pub fn new(specs: Vec<ParameterSpec>) -> Arc<Self> {
        let current = specs
            .iter()
            .map(|s| (s.name.clone(), s.default.clone()))
            .collect();
        Arc::new(Self {
            inner: Mutex::new(TableState {
                current,
                version: 0,
            }),
            specs,
        })
    }

    pub fn specs(&self) -> &[ParameterSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&ParameterSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Validate and stage a new value. Rejected values leave the old one
    /// in place.
    pub fn set(&self, node_id: &str, name: &str, value: ParamValue) -> Result<SetOutcome> {
        let spec = self.spec(name).ok_or_else(|| GraphError::Validation(format!(
            "node {node_id} has no parameter named {name}"
        )))?;
        if !spec.admits(&value) {
            return Err(GraphError::Validation(format!(
                "node {node_id}: value {} out of range for parameter {name}",
                value.render()
            )));
        }
        let mut state = self.inner.lock().unwrap();
        if state.current.get(name) == Some(&value) {
            return Ok(SetOutcome::NoOp);
        }
        state.current.insert(name.to_string(), value);
        state.version += 1;
        Ok(SetOutcome::Applied)
    }

    /// Initialize a value during graph construction (same validation).
    pub fn init(&self, node_id: &str, name: &str, value: ParamValue) -> Result<()> {
        self.set(node_id, name, value).map(|_| ())
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        let state = self.inner.lock().unwrap();
        ParamSnapshot {
            values: state.current.clone(),
            version: state.version,
        }
    }
}
