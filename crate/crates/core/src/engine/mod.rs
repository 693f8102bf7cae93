//! Pipeline execution: planning, scheduling, caching, cancellation and
//! progress events.

mod cache;
mod cancel;
mod events;
mod execute;
mod plan;

pub use cache::{cache_key, CacheKey, ResultCache, DEFAULT_CACHE_BYTES};
pub use cancel::{CancelOutcome, CancelToken};
pub use events::{check_event_grammar, EventKind, EventSink, NullSink, RunEvent, VecSink};
pub use execute::{Engine, ExecuteOptions, Outputs, RunReport, RunStatus};
pub use plan::{plan, ExecutionPlan};

use crate::graph::{DataType, PortRef, ValidationReport};
use crate::module::ModuleError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("graph is invalid:\n{0}")]
    InvalidGraph(ValidationReport),
    #[error("external input {0} was not supplied")]
    MissingExternalInput(PortRef),
    #[error("{0} is not a declared external input")]
    UnexpectedExternalInput(PortRef),
    #[error("{port}: expected {expected}, got {actual}")]
    TypeMismatchAtRuntime {
        port: PortRef,
        expected: DataType,
        actual: DataType,
    },
    #[error("module did not produce {0}")]
    MissingOutput(PortRef),
    #[error("module produced undeclared output {0}")]
    UnexpectedOutput(PortRef),
    #[error("node {node_id}: {source}")]
    NodeExecution { node_id: String, source: ModuleError },
    #[error("run cancelled")]
    Cancelled,
    #[error("internal error: {0}")]
    Internal(String),
}

impl EngineError {
    pub fn is_filter_reject(&self) -> bool {
        matches!(self, EngineError::NodeExecution { source, .. } if source.is_filter_reject())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{builtin_registry, scenario_pipeline, synth_only_pipeline, ScenarioConfig};
    use crate::graph::{topo_order, NodeInstance, ParamValue, PipelineGraph};
    use crate::value::Value;
    use std::sync::Arc;
    use std::time::Duration;

    fn engine() -> Engine {
        Engine::new(Arc::new(builtin_registry()))
    }

    fn delay_chain(ids: &[&str], ms: i64) -> PipelineGraph {
        let mut g = PipelineGraph::new("delays");
        for id in ids {
            g.add_node(NodeInstance::new(id, "util.delay", 1).with_param("ms", ParamValue::Int(ms)));
        }
        for pair in ids.windows(2) {
            g.connect((pair[0], "text"), (pair[1], "text"));
        }
        g.declare_external_input(ids[0], "text");
        g
    }

    fn text_input(node: &str) -> Outputs {
        Outputs::from([(PortRef::new(node, "text"), Value::text("hi"))])
    }

    fn started(events: &[RunEvent]) -> Vec<(u64, String)> {
        events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::NodeStarted { node_id } => Some((e.seq, node_id.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn chain_and_diamond_plans() {
        let r = builtin_registry();
        let chain = delay_chain(&["a", "b", "c"], 0);
        let waves = |g: &PipelineGraph| plan(g, &r).unwrap().waves;
        assert_eq!(waves(&chain), [vec!["a"], vec!["b"], vec!["c"]]);
        let mut diamond = PipelineGraph::new("d");
        for id in ["a", "b", "c"] {
            diamond.add_node(NodeInstance::new(id, "util.delay", 1));
        }
        diamond.add_node(NodeInstance::new("d", "mask.collect", 1));
        diamond.add_node(NodeInstance::new("m", "synth.scene", 1));
        // d collects masks, so it hangs off a scene node fed by b.
        diamond.connect(("a", "text"), ("b", "text")).connect(("a", "text"), ("c", "text"));
        diamond.declare_external_input("a", "text");
        diamond.connect(("b", "text"), ("m", "prompt"));
        diamond.connect(("m", "mask"), ("d", "a"));
        let p = plan(&diamond, &r).unwrap();
        assert_eq!(p.waves, [vec!["a"], vec!["b", "c"], vec!["m"], vec!["d"]]);
        assert_eq!(p.flatten(), topo_order(&diamond).unwrap());
    }

    #[test]
    fn invalid_graph_is_rejected_by_plan() {
        let mut g = delay_chain(&["a", "b"], 0);
        g.connect(("b", "text"), ("a", "text"));
        assert!(matches!(plan(&g, &builtin_registry()), Err(EngineError::InvalidGraph(_))));
    }

    #[test]
    fn parallelism_does_not_change_outputs() {
        let g = scenario_pipeline(&ScenarioConfig::default());
        let run = |p| {
            let report = engine().execute(
                &g,
                &Outputs::new(),
                &ExecuteOptions::seeded(5).parallelism(p),
                &NullSink::default(),
                &CancelToken::new(),
            );
            assert_eq!(report.status, RunStatus::Finished);
            report.digests
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn warm_cache_serves_every_node() {
        let e = engine();
        let g = scenario_pipeline(&ScenarioConfig::default());
        let opts = ExecuteOptions::seeded(9);
        let cold = e.execute(&g, &Outputs::new(), &opts, &NullSink::default(), &CancelToken::new());
        assert_eq!(cold.invocations, g.nodes.len());
        let sink = VecSink::new();
        let warm = e.execute(&g, &Outputs::new(), &opts, &sink, &CancelToken::new());
        assert_eq!(warm.invocations, 0);
        assert_eq!(warm.digests, cold.digests);
        let events = sink.events();
        check_event_grammar(&events, &g).unwrap();
        let hits: Vec<bool> = events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::NodeFinished { cache_hit, .. } => Some(*cache_hit),
                _ => None,
            })
            .collect();
        assert_eq!(hits, vec![true; g.nodes.len()]);
    }

    #[test]
    fn rejected_sample_stops_at_gate() {
        let cfg = ScenarioConfig {
            failure_rate: 1.0,
            ..ScenarioConfig::default()
        };
        let g = scenario_pipeline(&cfg);
        let sink = VecSink::new();
        let report = engine().execute(&g, &Outputs::new(), &ExecuteOptions::seeded(1), &sink, &CancelToken::new());
        let RunStatus::Failed { node_id, error } = &report.status else { panic!("{:?}", report.status) };
        assert_eq!(node_id.as_deref(), Some("gate"));
        assert!(error.is_filter_reject());
        let events = sink.events();
        check_event_grammar(&events, &g).unwrap();
        let names: Vec<String> = started(&events).into_iter().map(|(_, n)| n).collect();
        for downstream in ["coarse", "refine", "post", "eval"] {
            assert!(!names.iter().any(|n| n == downstream));
        }
        assert!(matches!(
            &events.last().unwrap().kind,
            EventKind::JobFailed { node_id: Some(n), .. } if n == "gate"
        ));
        // Finished upstream outputs stay available.
        assert!(report.output("scene", "image").is_some());
    }

    #[test]
    fn cancel_before_start() {
        let g = delay_chain(&["a", "b"], 0);
        let sink = VecSink::new();
        let token = CancelToken::new();
        assert_eq!(token.cancel(), CancelOutcome::Acknowledged { marker: None });
        let report = engine().execute(&g, &text_input("a"), &ExecuteOptions::default(), &sink, &token);
        assert_eq!(report.status, RunStatus::Cancelled);
        assert_eq!(sink.events().iter().map(|e| e.kind.clone()).collect::<Vec<_>>(), [EventKind::JobCancelled]);
        assert_eq!(token.cancel(), CancelOutcome::AlreadyTerminal);
    }

    #[test]
    fn cancel_mid_run_starts_nothing_new() {
        let g = delay_chain(&["a", "b", "c", "d"], 150);
        let sink = Arc::new(VecSink::new());
        let token = CancelToken::new();
        let e = engine();
        let marker = std::thread::scope(|s| {
            let handle = s.spawn(|| e.execute(&g, &text_input("a"), &ExecuteOptions::default(), &*sink, &token));
            assert!(sink.wait_for(Duration::from_secs(5), |ev| matches!(&ev.kind, EventKind::NodeStarted { node_id } if node_id == "b")));
            let CancelOutcome::Acknowledged { marker } = token.cancel() else { panic!("already terminal") };
            assert_eq!(handle.join().unwrap().status, RunStatus::Cancelled);
            marker.unwrap()
        });
        let events = sink.events();
        check_event_grammar(&events, &g).unwrap();
        assert!(started(&events).iter().all(|(seq, _)| *seq <= marker));
        // The in-flight node completes.
        assert!(events.iter().any(|e| matches!(&e.kind, EventKind::NodeFinished { node_id, .. } if node_id == "b")));
        assert_eq!(events.last().unwrap().kind, EventKind::JobCancelled);
    }

    #[test]
    fn external_inputs_are_checked() {
        let g = synth_only_pipeline();
        let e = engine();
        let missing = e.run(&g, &Outputs::new(), &ExecuteOptions::default());
        assert!(matches!(missing, Err(EngineError::MissingExternalInput(_))));
        let wrong = Outputs::from([(PortRef::new("scene", "prompt"), Value::Number(1.0))]);
        assert!(matches!(
            e.run(&g, &wrong, &ExecuteOptions::default()),
            Err(EngineError::TypeMismatchAtRuntime { .. })
        ));
        let extra = Outputs::from([(PortRef::new("scene", "seed"), Value::Number(1.0))]);
        assert!(matches!(
            e.run(&g, &extra, &ExecuteOptions::default()),
            Err(EngineError::UnexpectedExternalInput(_))
        ));
    }

    #[test]
    fn module_error_names_the_node() {
        let g = synth_only_pipeline();
        let bad_prompt = Outputs::from([(PortRef::new("scene", "prompt"), Value::text("not json"))]);
        let err = engine().run(&g, &bad_prompt, &ExecuteOptions::default()).unwrap_err();
        assert!(matches!(err, EngineError::NodeExecution { ref node_id, .. } if node_id == "scene"));
    }
}
