//! The pipeline file format.
//!
//! ```text
//! { "edges": [ { "from": {"node": "...", "port": "..."},
//!                "to":   {"node": "...", "port": "..."} } ],
//!   "format_version": 1,
//!   "metadata": { "external_inputs": "node.port,...", ... },
//!   "name": "...",
//!   "nodes": [ { "module_id": "...", "module_version": 1, "node_id": "...",
//!                "params": { ... } } ] }
//! ```
//!
//! Serialization materializes every hyperparameter default and writes the
//! canonical form: sorted keys, nodes sorted by id, edges sorted by
//! `(from.node, from.port, to.node, to.port)`, external inputs sorted, two-space
//! indentation. Parsing accepts any key or element order.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value as Json};

use super::pipeline::{Edge, NodeInstance, PipelineGraph, PortRef, EXTERNAL_INPUTS_KEY, FORMAT_VERSION};
use super::registry::ModuleRegistry;
use super::types::ParamValue;
use super::validate::{validate_graph, ValidationReport};
use crate::canonical;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u64),
    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("graph is invalid:\n{0}")]
    InvalidGraph(ValidationReport),
}

/// Fills in every default hyperparameter and normalizes values to their
/// declared kind. Nodes whose module is unknown are left untouched.
pub fn materialize(graph: &PipelineGraph, registry: &ModuleRegistry) -> PipelineGraph {
    let mut out = graph.clone();
    for node in &mut out.nodes {
        let Some(spec) = registry.spec(&node.module_id) else { continue };
        for hp in &spec.hyperparams {
            let value = match node.params.get(&hp.name) {
                Some(v) => hp.coerce(v).unwrap_or_else(|_| v.clone()),
                None => hp.default.clone(),
            };
            node.params.insert(hp.name.clone(), value);
        }
    }
    out
}

/// Validates, materializes defaults and renders the canonical bytes.
pub fn serialize_pipeline(graph: &PipelineGraph, registry: &ModuleRegistry) -> Result<String, FormatError> {
    let report = validate_graph(graph, registry);
    if !report.ok {
        return Err(FormatError::InvalidGraph(report));
    }
    Ok(to_canonical_text(&materialize(graph, registry)))
}

/// Canonical rendering of the graph exactly as given (no validation, no
/// default materialization).
pub fn to_canonical_text(graph: &PipelineGraph) -> String {
    canonical::to_pretty(&to_json(graph))
}

/// SHA-256 of the canonical rendering.
pub fn pipeline_digest(graph: &PipelineGraph) -> String {
    canonical::sha256_hex(to_canonical_text(graph).as_bytes())
}

fn to_json(graph: &PipelineGraph) -> Json {
    let g = graph.sorted();
    let mut metadata = g.metadata.clone();
    if let Some(raw) = metadata.get_mut(EXTERNAL_INPUTS_KEY) {
        let entries: BTreeSet<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        *raw = entries.into_iter().collect::<Vec<_>>().join(",");
    }
    let nodes: Vec<Json> = g
        .nodes
        .iter()
        .map(|n| {
            json!({
                "node_id": n.node_id,
                "module_id": n.module_id,
                "module_version": n.module_version,
                "params": n.params,
            })
        })
        .collect();
    let edges: Vec<Json> = g
        .edges
        .iter()
        .map(|e| {
            json!({
                "from": {"node": e.from.node, "port": e.from.port},
                "to": {"node": e.to.node, "port": e.to.port},
            })
        })
        .collect();
    json!({
        "format_version": g.format_version,
        "name": g.name,
        "metadata": metadata,
        "nodes": nodes,
        "edges": edges,
    })
}

/// Parses a pipeline file in any key/element order.
pub fn deserialize_pipeline(bytes: &[u8]) -> Result<PipelineGraph, FormatError> {
    let doc: Json = serde_json::from_slice(bytes).map_err(|e| FormatError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    from_json(&doc)
}

/// Same as [`deserialize_pipeline`] for an already-parsed document.
pub fn from_json(doc: &Json) -> Result<PipelineGraph, FormatError> {
    let root = object(doc, "<root>")?;
    let version = required(root, "format_version", "format_version")?
        .as_u64()
        .ok_or_else(|| schema("format_version", "expected a non-negative integer"))?;
    if version != FORMAT_VERSION as u64 {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let name = string(required(root, "name", "name")?, "name")?;
    let metadata = match root.get("metadata") {
        None | Some(Json::Null) => BTreeMap::new(),
        Some(m) => object(m, "metadata")?
            .iter()
            .map(|(k, v)| Ok((k.clone(), string(v, &format!("metadata.{k}"))?)))
            .collect::<Result<_, FormatError>>()?,
    };
    let nodes = array(required(root, "nodes", "nodes")?, "nodes")?
        .iter()
        .enumerate()
        .map(|(i, n)| parse_node(n, &format!("nodes[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let edges = array(required(root, "edges", "edges")?, "edges")?
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let path = format!("edges[{i}]");
            let e = object(e, &path)?;
            Ok(Edge {
                from: parse_port(required(e, "from", &format!("{path}.from"))?, &format!("{path}.from"))?,
                to: parse_port(required(e, "to", &format!("{path}.to"))?, &format!("{path}.to"))?,
            })
        })
        .collect::<Result<Vec<_>, FormatError>>()?;
    Ok(PipelineGraph {
        format_version: FORMAT_VERSION,
        name,
        metadata,
        nodes,
        edges,
    })
}

fn parse_node(doc: &Json, path: &str) -> Result<NodeInstance, FormatError> {
    let n = object(doc, path)?;
    let field = |name: &str| format!("{path}.{name}");
    let module_version = required(n, "module_version", &field("module_version"))?
        .as_u64()
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| schema(&field("module_version"), "expected a non-negative integer"))?;
    let params = match n.get("params") {
        None | Some(Json::Null) => BTreeMap::new(),
        Some(p) => object(p, &field("params"))?
            .iter()
            .map(|(k, v)| {
                let value = match v {
                    Json::Bool(b) => ParamValue::Bool(*b),
                    Json::String(s) => ParamValue::Str(s.clone()),
                    Json::Number(num) => match num.as_i64() {
                        Some(i) => ParamValue::Int(i),
                        None => ParamValue::Float(num.as_f64().expect("JSON numbers are finite")),
                    },
                    _ => return Err(schema(&format!("{path}.params.{k}"), "expected a scalar")),
                };
                Ok((k.clone(), value))
            })
            .collect::<Result<_, FormatError>>()?,
    };
    Ok(NodeInstance {
        node_id: string(required(n, "node_id", &field("node_id"))?, &field("node_id"))?,
        module_id: string(required(n, "module_id", &field("module_id"))?, &field("module_id"))?,
        module_version,
        params,
    })
}

fn parse_port(doc: &Json, path: &str) -> Result<PortRef, FormatError> {
    let p = object(doc, path)?;
    Ok(PortRef {
        node: string(required(p, "node", &format!("{path}.node"))?, &format!("{path}.node"))?,
        port: string(required(p, "port", &format!("{path}.port"))?, &format!("{path}.port"))?,
    })
}

fn schema(field: &str, message: &str) -> FormatError {
    FormatError::Schema {
        field: field.to_string(),
        message: message.to_string(),
    }
}

fn required<'a>(obj: &'a Map<String, Json>, key: &str, path: &str) -> Result<&'a Json, FormatError> {
    obj.get(key).ok_or_else(|| schema(path, "missing required field"))
}

fn object<'a>(doc: &'a Json, path: &str) -> Result<&'a Map<String, Json>, FormatError> {
    doc.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn array<'a>(doc: &'a Json, path: &str) -> Result<&'a Vec<Json>, FormatError> {
    doc.as_array().ok_or_else(|| schema(path, "expected an array"))
}

fn string(doc: &Json, path: &str) -> Result<String, FormatError> {
    doc.as_str().map(str::to_string).ok_or_else(|| schema(path, "expected a string"))
}
