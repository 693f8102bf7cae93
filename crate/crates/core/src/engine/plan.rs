use crate::graph::{validate_graph, waves, ModuleRegistry, PipelineGraph};

use super::EngineError;

/// Wave decomposition of a validated graph. Wave `k` depends only on waves
/// before it; nodes within a wave are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionPlan {
    pub waves: Vec<Vec<String>>,
}

impl ExecutionPlan {
    pub fn flatten(&self) -> Vec<String> {
        self.waves.iter().flatten().cloned().collect()
    }

    pub fn node_count(&self) -> usize {
        self.waves.iter().map(Vec::len).sum()
    }
}

pub fn plan(graph: &PipelineGraph, registry: &ModuleRegistry) -> Result<ExecutionPlan, EngineError> {
    let report = validate_graph(graph, registry);
    if !report.ok {
        return Err(EngineError::InvalidGraph(report));
    }
    let waves = waves(graph).map_err(|e| EngineError::Internal(e.to_string()))?;
    Ok(ExecutionPlan { waves })
}
