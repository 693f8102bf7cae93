//! Whole-graph validation. Violations are reported as data, never as errors,
//! and every violation is listed rather than only the first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use super::pipeline::{Edge, PipelineGraph, PortRef, FORMAT_VERSION};
use super::registry::ModuleRegistry;
use super::types::{is_identifier, ModuleSpec, ParamViolation};

/// Stable rule identifiers used in diagnostics.
pub mod rules {
    pub const FORMAT_VERSION: &str = "format_version";
    pub const INVALID_NODE_ID: &str = "invalid_node_id";
    pub const DUPLICATE_NODE_ID: &str = "duplicate_node_id";
    pub const UNKNOWN_MODULE: &str = "unknown_module";
    pub const UNKNOWN_MODULE_VERSION: &str = "unknown_module_version";
    pub const UNKNOWN_PARAM: &str = "unknown_param";
    pub const PARAM_TYPE: &str = "param_type";
    pub const PARAM_RANGE: &str = "param_range";
    pub const UNKNOWN_NODE: &str = "unknown_node";
    pub const UNKNOWN_PORT: &str = "unknown_port";
    pub const TYPE_MISMATCH: &str = "type_mismatch";
    pub const INPUT_OCCUPIED: &str = "input_occupied";
    pub const CYCLE: &str = "cycle";
    pub const MISSING_INPUT: &str = "missing_input";
    pub const BAD_EXTERNAL_INPUT: &str = "bad_external_input";
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<Edge>,
    /// Every node involved, for rules spanning several nodes (cycles).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<String>,
    pub message: String,
}

impl Diagnostic {
    fn at_node(rule: &str, node: &str, message: String) -> Self {
        Self {
            rule: rule.to_string(),
            node: Some(node.to_string()),
            edge: None,
            nodes: Vec::new(),
            message,
        }
    }

    fn at_edge(rule: &str, edge: &Edge, message: String) -> Self {
        Self {
            rule: rule.to_string(),
            node: None,
            edge: Some(edge.clone()),
            nodes: Vec::new(),
            message,
        }
    }

    fn global(rule: &str, message: String) -> Self {
        Self {
            rule: rule.to_string(),
            node: None,
            edge: None,
            nodes: Vec::new(),
            message,
        }
    }

    /// Human-readable location of the violation.
    pub fn locus(&self) -> String {
        match (&self.node, &self.edge) {
            (_, Some(edge)) => format!("edge {edge}"),
            (Some(node), None) => format!("node {node}"),
            (None, None) if !self.nodes.is_empty() => format!("nodes {}", self.nodes.join(",")),
            (None, None) => "graph".to_string(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.rule, self.locus(), self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn has_rule(&self, rule: &str) -> bool {
        self.diagnostics.iter().any(|d| d.rule == rule)
    }

    pub fn rules(&self) -> BTreeSet<&str> {
        self.diagnostics.iter().map(|d| d.rule.as_str()).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.diagnostics {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Checks every graph invariant against `registry`.
pub fn validate_graph(graph: &PipelineGraph, registry: &ModuleRegistry) -> ValidationReport {
    let mut diags = Vec::new();

    if graph.format_version != FORMAT_VERSION {
        diags.push(Diagnostic::global(
            rules::FORMAT_VERSION,
            format!("format_version {} is not supported", graph.format_version),
        ));
    }

    // Node ids and module resolution.
    let mut specs: BTreeMap<&str, Option<&ModuleSpec>> = BTreeMap::new();
    for node in &graph.nodes {
        let id = node.node_id.as_str();
        if !is_identifier(id) {
            diags.push(Diagnostic::at_node(rules::INVALID_NODE_ID, id, format!("`{id}` is not an identifier")));
        }
        if specs.contains_key(id) {
            diags.push(Diagnostic::at_node(rules::DUPLICATE_NODE_ID, id, format!("node id `{id}` is used twice")));
            continue;
        }
        let spec = match registry.spec(&node.module_id) {
            None => {
                diags.push(Diagnostic::at_node(
                    rules::UNKNOWN_MODULE,
                    id,
                    format!("module `{}` is not registered", node.module_id),
                ));
                None
            }
            Some(spec) if spec.version != node.module_version => {
                diags.push(Diagnostic::at_node(
                    rules::UNKNOWN_MODULE_VERSION,
                    id,
                    format!(
                        "module `{}` v{} is not registered (registry has v{})",
                        node.module_id, node.module_version, spec.version
                    ),
                ));
                None
            }
            Some(spec) => Some(spec),
        };
        specs.insert(id, spec);
        if let Some(spec) = spec {
            for (name, value) in &node.params {
                match spec.hyperparam(name) {
                    None => diags.push(Diagnostic::at_node(
                        rules::UNKNOWN_PARAM,
                        id,
                        format!("`{}` has no hyperparameter `{name}`", spec.id),
                    )),
                    Some(hp) => match hp.coerce(value) {
                        Ok(_) => {}
                        Err(ParamViolation::Kind(msg)) => {
                            diags.push(Diagnostic::at_node(rules::PARAM_TYPE, id, msg))
                        }
                        Err(ParamViolation::Range(msg)) => {
                            diags.push(Diagnostic::at_node(rules::PARAM_RANGE, id, msg))
                        }
                    },
                }
            }
        }
    }

    // Edges: endpoints, port types and single-writer inputs.
    let mut fed: BTreeSet<PortRef> = BTreeSet::new();
    let mut resolved_edges: Vec<(&str, &str)> = Vec::new();
    for edge in &graph.edges {
        let mut endpoints_known = true;
        let mut port_types = [None, None];
        for (slot, (end, outgoing)) in [(&edge.from, true), (&edge.to, false)].into_iter().enumerate() {
            match specs.get(end.node.as_str()) {
                None => {
                    endpoints_known = false;
                    diags.push(Diagnostic::at_edge(
                        rules::UNKNOWN_NODE,
                        edge,
                        format!("node `{}` does not exist", end.node),
                    ));
                }
                Some(None) => {}
                Some(Some(spec)) => {
                    let port = if outgoing { spec.output(&end.port) } else { spec.input(&end.port) };
                    match port {
                        Some(p) => port_types[slot] = Some(&p.dtype),
                        None => diags.push(Diagnostic::at_edge(
                            rules::UNKNOWN_PORT,
                            edge,
                            format!(
                                "`{}` has no {} port `{}`",
                                spec.id,
                                if outgoing { "output" } else { "input" },
                                end.port
                            ),
                        )),
                    }
                }
            }
        }
        if let [Some(src), Some(dst)] = port_types {
            if !src.connects_to(dst) {
                diags.push(Diagnostic::at_edge(
                    rules::TYPE_MISMATCH,
                    edge,
                    format!("{} output `{}` cannot feed {} input `{}`", src, edge.from, dst, edge.to),
                ));
            }
        }
        if !fed.insert(edge.to.clone()) {
            diags.push(Diagnostic::at_edge(
                rules::INPUT_OCCUPIED,
                edge,
                format!("input `{}` already has an incoming edge", edge.to),
            ));
        }
        if endpoints_known {
            resolved_edges.push((edge.from.node.as_str(), edge.to.node.as_str()));
        }
    }

    // Cycles, one diagnostic per strongly connected component.
    let mut g = DiGraph::<&str, ()>::new();
    let index: BTreeMap<&str, _> = specs.keys().map(|id| (*id, g.add_node(*id))).collect();
    for (from, to) in &resolved_edges {
        g.add_edge(index[from], index[to], ());
    }
    for component in tarjan_scc(&g) {
        let self_loop = component.len() == 1 && g.contains_edge(component[0], component[0]);
        if component.len() > 1 || self_loop {
            let mut nodes: Vec<String> = component.iter().map(|i| g[*i].to_string()).collect();
            nodes.sort();
            diags.push(Diagnostic {
                rule: rules::CYCLE.to_string(),
                node: None,
                edge: None,
                message: format!("cycle through {}", nodes.join(" -> ")),
                nodes,
            });
        }
    }

    // External inputs and unfed required ports.
    let mut external: BTreeSet<PortRef> = BTreeSet::new();
    for entry in graph.external_inputs() {
        match entry {
            Err(raw) => diags.push(Diagnostic::global(
                rules::BAD_EXTERNAL_INPUT,
                format!("`{raw}` is not of the form node.port"),
            )),
            Ok(port) => {
                match specs.get(port.node.as_str()) {
                    None => diags.push(Diagnostic::global(
                        rules::BAD_EXTERNAL_INPUT,
                        format!("external input `{port}` names an unknown node"),
                    )),
                    Some(Some(spec)) if spec.input(&port.port).is_none() => diags.push(Diagnostic::at_node(
                        rules::UNKNOWN_PORT,
                        &port.node,
                        format!("external input `{port}`: `{}` has no such input", spec.id),
                    )),
                    _ if fed.contains(&port) => diags.push(Diagnostic::at_node(
                        rules::BAD_EXTERNAL_INPUT,
                        &port.node,
                        format!("external input `{port}` is also fed by an edge"),
                    )),
                    _ => {}
                }
                external.insert(port);
            }
        }
    }
    for (id, spec) in &specs {
        let Some(spec) = spec else { continue };
        for input in spec.inputs.iter().filter(|p| p.required) {
            let port = PortRef::new(id, &input.name);
            if !fed.contains(&port) && !external.contains(&port) {
                diags.push(Diagnostic::at_node(
                    rules::MISSING_INPUT,
                    id,
                    format!("required input `{port}` is neither connected nor declared external"),
                ));
            }
        }
    }

    diags.sort();
    diags.dedup();
    ValidationReport { ok: diags.is_empty(), diagnostics: diags }
}
