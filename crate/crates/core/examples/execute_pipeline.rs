//! Execute the scenario pipeline with an event sink, print the event stream,
//! then run it again to show every node served from the result cache.

use std::sync::Arc;

use segflow::builtins::{builtin_registry, scenario_pipeline, ScenarioConfig};
use segflow::engine::{check_event_grammar, CancelToken, Engine, EventKind, ExecuteOptions, Outputs, VecSink};
use segflow::value::Value;

fn main() {
    let graph = scenario_pipeline(&ScenarioConfig::default());
    let engine = Engine::new(Arc::new(builtin_registry()));
    let opts = ExecuteOptions::seeded(7).parallelism(4);

    let sink = VecSink::default();
    let report = engine.execute(&graph, &Outputs::new(), &opts, &sink, &CancelToken::new());
    for event in sink.events() {
        match &event.kind {
            EventKind::NodeFinished { node_id, elapsed_ms, cache_hit, .. } => {
                println!("{:>3} {:<14} {node_id:<8} {elapsed_ms} ms cache_hit={cache_hit}", event.seq, event.kind.name())
            }
            other => println!("{:>3} {}", event.seq, other.name()),
        }
    }
    check_event_grammar(&sink.events(), &graph).expect("well-formed event log");
    if let Some(Value::Number(miou)) = report.output("eval", "miou") {
        println!("mIoU after refinement: {miou:.4}");
    }

    let again = engine.execute(&graph, &Outputs::new(), &opts, &VecSink::default(), &CancelToken::new());
    println!(
        "second run: {} invocations, {} cache hits, same digests: {}",
        again.invocations,
        again.cache_hits,
        again.digests == report.digests
    );
}
