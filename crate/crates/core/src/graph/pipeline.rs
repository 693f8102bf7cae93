use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::ParamValue;

/// Current pipeline file format version.
pub const FORMAT_VERSION: u32 = 1;

/// Metadata key listing pipeline-level inputs as comma-separated `node.port`.
pub const EXTERNAL_INPUTS_KEY: &str = "external_inputs";

/// A module instance inside a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInstance {
    pub node_id: String,
    pub module_id: String,
    pub module_version: u32,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl NodeInstance {
    pub fn new(node_id: &str, module_id: &str, module_version: u32) -> Self {
        Self {
            node_id: node_id.to_string(),
            module_id: module_id.to_string(),
            module_version,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, name: &str, value: ParamValue) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }
}

/// One side of an edge: a named port on a node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortRef {
    pub node: String,
    pub port: String,
}

impl PortRef {
    pub fn new(node: &str, port: &str) -> Self {
        Self {
            node: node.to_string(),
            port: port.to_string(),
        }
    }

    /// Parses `node.port`; the port is everything after the last dot.
    pub fn parse(s: &str) -> Option<Self> {
        let (node, port) = s.trim().rsplit_once('.')?;
        (!node.is_empty() && !port.is_empty()).then(|| Self::new(node, port))
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: PortRef,
    pub to: PortRef,
}

impl Edge {
    pub fn new(from: (&str, &str), to: (&str, &str)) -> Self {
        Self {
            from: PortRef::new(from.0, from.1),
            to: PortRef::new(to.0, to.1),
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.from, self.to)
    }
}

/// The exportable pipeline artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineGraph {
    pub format_version: u32,
    pub name: String,
    pub metadata: BTreeMap<String, String>,
    pub nodes: Vec<NodeInstance>,
    pub edges: Vec<Edge>,
}

impl PipelineGraph {
    pub fn new(name: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            name: name.to_string(),
            metadata: BTreeMap::new(),
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn node(&self, node_id: &str) -> Option<&NodeInstance> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    pub fn add_node(&mut self, node: NodeInstance) -> &mut Self {
        self.nodes.push(node);
        self
    }

    pub fn connect(&mut self, from: (&str, &str), to: (&str, &str)) -> &mut Self {
        self.edges.push(Edge::new(from, to));
        self
    }

    /// Parsed entries of the `external_inputs` metadata key. Malformed entries
    /// are returned as `Err` with the raw text so the validator can report them.
    pub fn external_inputs(&self) -> Vec<Result<PortRef, String>> {
        self.metadata
            .get(EXTERNAL_INPUTS_KEY)
            .map(|raw| {
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| PortRef::parse(s).ok_or_else(|| s.to_string()))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn declare_external_input(&mut self, node: &str, port: &str) -> &mut Self {
        let entry = self.metadata.entry(EXTERNAL_INPUTS_KEY.to_string()).or_default();
        if !entry.is_empty() {
            entry.push(',');
        }
        entry.push_str(&format!("{node}.{port}"));
        self
    }

    /// Nodes sorted by id and edges sorted by their 4-tuple.
    pub fn sorted(&self) -> Self {
        let mut g = self.clone();
        g.nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        g.edges.sort();
        g
    }
}
