//! Port data types, hyperparameter schemas and module descriptions.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Maximum nesting of `list<...>` types.
pub const MAX_LIST_DEPTH: usize = 2;

/// The type carried by a port. Edges are legal only between equal types.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DataType {
    Text,
    Image,
    Mask,
    Number,
    Boolean,
    List(Box<DataType>),
}

impl DataType {
    pub fn list_of(inner: DataType) -> Self {
        DataType::List(Box::new(inner))
    }

    /// Number of `list` wrappers around the scalar type.
    pub fn list_depth(&self) -> usize {
        match self {
            DataType::List(inner) => 1 + inner.list_depth(),
            _ => 0,
        }
    }

    /// Whether an output of type `self` may feed an input of type `sink`.
    pub fn connects_to(&self, sink: &DataType) -> bool {
        self == sink
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataType::Text => f.write_str("text"),
            DataType::Image => f.write_str("image"),
            DataType::Mask => f.write_str("mask"),
            DataType::Number => f.write_str("number"),
            DataType::Boolean => f.write_str("boolean"),
            DataType::List(inner) => write!(f, "list<{inner}>"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown data type `{0}`")]
pub struct ParseDataTypeError(pub String);

impl FromStr for DataType {
    type Err = ParseDataTypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "text" => Ok(DataType::Text),
            "image" => Ok(DataType::Image),
            "mask" => Ok(DataType::Mask),
            "number" => Ok(DataType::Number),
            "boolean" => Ok(DataType::Boolean),
            _ => s
                .strip_prefix("list<")
                .and_then(|rest| rest.strip_suffix('>'))
                .ok_or_else(|| ParseDataTypeError(s.to_string()))
                .and_then(|inner| inner.parse().map(DataType::list_of))
                .map_err(|_| ParseDataTypeError(s.to_string())),
        }
    }
}

impl Serialize for DataType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DataType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `[a-z][a-z0-9_]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Dot-separated identifiers with at least two segments, e.g. `synth.scene`.
pub fn is_module_id(s: &str) -> bool {
    let parts: Vec<&str> = s.split('.').collect();
    parts.len() >= 2 && parts.iter().all(|p| is_identifier(p))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortSpec {
    pub name: String,
    pub dtype: DataType,
    /// Only meaningful for inputs.
    #[serde(default = "default_true")]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

fn default_true() -> bool {
    true
}

impl PortSpec {
    pub fn new(name: &str, dtype: DataType, description: &str) -> Self {
        Self {
            name: name.to_string(),
            dtype,
            required: true,
            description: description.to_string(),
        }
    }

    pub fn optional(mut self) -> Self {
        self.required = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Int,
    Float,
    String,
    Bool,
    Enum,
}

/// A hyperparameter value as it appears in a pipeline file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ParamValue::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::Str(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub default: ParamValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default)]
    pub description: String,
}

/// Why a hyperparameter value was refused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamViolation {
    /// Wrong JSON kind for the declared parameter kind.
    Kind(String),
    /// Outside min/max or not one of the choices.
    Range(String),
}

impl HyperparamSpec {
    fn base(name: &str, kind: ParamKind, default: ParamValue, description: &str) -> Self {
        Self {
            name: name.to_string(),
            kind,
            default,
            min: None,
            max: None,
            choices: None,
            description: description.to_string(),
        }
    }

    pub fn int(name: &str, default: i64, min: Option<i64>, max: Option<i64>, description: &str) -> Self {
        let mut spec = Self::base(name, ParamKind::Int, ParamValue::Int(default), description);
        spec.min = min.map(|v| v as f64);
        spec.max = max.map(|v| v as f64);
        spec
    }

    pub fn float(name: &str, default: f64, min: Option<f64>, max: Option<f64>, description: &str) -> Self {
        let mut spec = Self::base(name, ParamKind::Float, ParamValue::Float(default), description);
        spec.min = min;
        spec.max = max;
        spec
    }

    pub fn string(name: &str, default: &str, description: &str) -> Self {
        Self::base(name, ParamKind::String, ParamValue::Str(default.to_string()), description)
    }

    pub fn boolean(name: &str, default: bool, description: &str) -> Self {
        Self::base(name, ParamKind::Bool, ParamValue::Bool(default), description)
    }

    pub fn choice(name: &str, default: &str, choices: &[&str], description: &str) -> Self {
        let mut spec = Self::base(name, ParamKind::Enum, ParamValue::Str(default.to_string()), description);
        spec.choices = Some(choices.iter().map(|c| c.to_string()).collect());
        spec
    }

    /// Checks `value` against kind, bounds and choices, returning the value in
    /// its normalized form (integers given for float parameters become floats).
    pub fn coerce(&self, value: &ParamValue) -> Result<ParamValue, ParamViolation> {
        let normalized = match (self.kind, value) {
            (ParamKind::Int, ParamValue::Int(_)) => value.clone(),
            (ParamKind::Float, ParamValue::Float(f)) if f.is_finite() => value.clone(),
            (ParamKind::Float, ParamValue::Int(i)) => ParamValue::Float(*i as f64),
            (ParamKind::String | ParamKind::Enum, ParamValue::Str(_)) => value.clone(),
            (ParamKind::Bool, ParamValue::Bool(_)) => value.clone(),
            _ => {
                return Err(ParamViolation::Kind(format!(
                    "`{}` expects {:?}, got {value}",
                    self.name, self.kind
                )))
            }
        };
        if let Some(x) = normalized.as_f64() {
            if self.min.is_some_and(|min| x < min) || self.max.is_some_and(|max| x > max) {
                return Err(ParamViolation::Range(format!(
                    "`{}` = {x} outside [{}, {}]",
                    self.name,
                    self.min.map_or("-inf".into(), |v| v.to_string()),
                    self.max.map_or("inf".into(), |v| v.to_string()),
                )));
            }
        }
        if let (Some(choices), Some(s)) = (&self.choices, normalized.as_str()) {
            if !choices.iter().any(|c| c == s) {
                return Err(ParamViolation::Range(format!(
                    "`{}` = {s:?} not one of {choices:?}",
                    self.name
                )));
            }
        }
        Ok(normalized)
    }
}

/// Everything the registry, validator and UI need to know about a module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub id: String,
    pub version: u32,
    pub display_name: String,
    pub description: String,
    pub labels: BTreeSet<String>,
    pub inputs: Vec<PortSpec>,
    pub outputs: Vec<PortSpec>,
    pub hyperparams: Vec<HyperparamSpec>,
}

/// A violated `ModuleSpec` rule, named by a stable rule id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecViolation {
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

impl ModuleSpec {
    pub fn input(&self, name: &str) -> Option<&PortSpec> {
        self.inputs.iter().find(|p| p.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&PortSpec> {
        self.outputs.iter().find(|p| p.name == name)
    }

    pub fn hyperparam(&self, name: &str) -> Option<&HyperparamSpec> {
        self.hyperparams.iter().find(|h| h.name == name)
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.contains(label)
    }

    /// Canonical bytes used to decide whether two registrations are identical.
    pub fn canonical_bytes(&self) -> String {
        crate::canonical::pretty_of(self)
    }

    /// Returns every violated invariant; empty means the spec is well formed.
    pub fn check(&self) -> Vec<SpecViolation> {
        let mut out = Vec::new();
        let mut bad = |rule: &'static str, detail: String| out.push(SpecViolation { rule, detail });
        if !is_module_id(&self.id) {
            bad("module_id", format!("`{}` is not a namespaced identifier", self.id));
        }
        if self.version < 1 {
            bad("version", "version must be >= 1".into());
        }
        if self.outputs.is_empty() {
            bad("no_outputs", "a module needs at least one output".into());
        }
        for (side, ports) in [("input", &self.inputs), ("output", &self.outputs)] {
            let mut seen = BTreeSet::new();
            for port in ports {
                if !is_identifier(&port.name) {
                    bad("port_name", format!("{side} port `{}` is not an identifier", port.name));
                }
                if !seen.insert(port.name.as_str()) {
                    bad("duplicate_port", format!("{side} port `{}` declared twice", port.name));
                }
                if port.dtype.list_depth() > MAX_LIST_DEPTH {
                    bad("list_depth", format!("{side} port `{}` nests lists too deeply", port.name));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for hp in &self.hyperparams {
            if !is_identifier(&hp.name) {
                bad("param_name", format!("hyperparam `{}` is not an identifier", hp.name));
            }
            if !seen.insert(hp.name.as_str()) {
                bad("duplicate_param", format!("hyperparam `{}` declared twice", hp.name));
            }
            if hp.kind == ParamKind::Enum && hp.choices.as_ref().is_none_or(|c| c.is_empty()) {
                bad("param_choices", format!("enum hyperparam `{}` has no choices", hp.name));
            }
            match hp.coerce(&hp.default) {
                Ok(v) if v == hp.default => {}
                _ => bad("param_default", format!("default of `{}` violates its own schema", hp.name)),
            }
        }
        out
    }
}
