use std::collections::{BTreeMap, BTreeSet};

use super::pipeline::PipelineGraph;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("graph has a cycle through {}", nodes.join(", "))]
pub struct CycleError {
    /// Nodes that could not be ordered, sorted.
    pub nodes: Vec<String>,
}

/// Predecessor sets per node, ignoring edges with unknown endpoints.
pub fn predecessors(graph: &PipelineGraph) -> BTreeMap<&str, BTreeSet<&str>> {
    let mut preds: BTreeMap<&str, BTreeSet<&str>> =
        graph.nodes.iter().map(|n| (n.node_id.as_str(), BTreeSet::new())).collect();
    for edge in &graph.edges {
        if preds.contains_key(edge.from.node.as_str()) {
            if let Some(set) = preds.get_mut(edge.to.node.as_str()) {
                set.insert(edge.from.node.as_str());
            }
        }
    }
    preds
}

/// Deterministic topological order: Kahn's algorithm run in rounds, each
/// round holding the nodes whose predecessors all sit in earlier rounds,
/// sorted by id. The order is therefore exactly the flattened [`waves`].
pub fn topo_order(graph: &PipelineGraph) -> Result<Vec<String>, CycleError> {
    Ok(waves(graph)?.into_iter().flatten().collect())
}

/// Groups nodes into waves: wave `k` holds the nodes whose longest chain of
/// predecessors has length `k`, sorted by id.
pub fn waves(graph: &PipelineGraph) -> Result<Vec<Vec<String>>, CycleError> {
    let preds = predecessors(graph);
    let mut succs: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut indegree: BTreeMap<&str, usize> = BTreeMap::new();
    for (node, ps) in &preds {
        indegree.insert(node, ps.len());
        for p in ps {
            succs.entry(p).or_default().push(node);
        }
    }
    let mut current: Vec<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut out: Vec<Vec<String>> = Vec::new();
    let mut placed = 0;
    while !current.is_empty() {
        current.sort_unstable();
        let mut next = Vec::new();
        for node in &current {
            for s in succs.get(node).into_iter().flatten() {
                let d = indegree.get_mut(s).expect("successor is a node");
                *d -= 1;
                if *d == 0 {
                    next.push(*s);
                }
            }
        }
        placed += current.len();
        out.push(current.iter().map(|n| n.to_string()).collect());
        current = next;
    }
    if placed < preds.len() {
        let nodes = indegree.iter().filter(|(_, d)| **d > 0).map(|(n, _)| n.to_string()).collect();
        return Err(CycleError { nodes });
    }
    Ok(out)
}
