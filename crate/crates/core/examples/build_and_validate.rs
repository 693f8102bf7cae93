//! Build a small pipeline in code, validate it, then break it on purpose and
//! print the diagnostics the validator reports.

use segflow::builtins::builtin_registry;
use segflow::graph::{validate_graph, NodeInstance, ParamValue, PipelineGraph};

fn main() {
    let registry = builtin_registry();

    let mut graph = PipelineGraph::new("two-class scenes");
    graph
        .add_node(NodeInstance::new("prompt", "prompt.build", 1).with_param("classes", ParamValue::Str("car:2,truck:1".into())))
        .add_node(NodeInstance::new("scene", "synth.scene", 1))
        .add_node(NodeInstance::new("coarse", "seg.coarse", 1))
        .add_node(NodeInstance::new("score", "eval.miou", 1));
    graph
        .connect(("prompt", "prompt"), ("scene", "prompt"))
        .connect(("scene", "image"), ("coarse", "image"))
        .connect(("coarse", "mask"), ("score", "pred"))
        .connect(("scene", "mask"), ("score", "truth"));

    let report = validate_graph(&graph, &registry);
    println!("valid: {}", report.ok);

    // An image into a text port, a second edge into an occupied input and a
    // loop back to the prompt.
    let mut broken = graph.clone();
    broken
        .add_node(NodeInstance::new("echo", "util.delay", 1))
        .connect(("scene", "image"), ("echo", "text"))
        .connect(("scene", "mask"), ("score", "pred"))
        .connect(("echo", "text"), ("scene", "prompt"));
    let report = validate_graph(&broken, &registry);
    println!("valid: {}", report.ok);
    for d in &report.diagnostics {
        println!("  {:<16} {:<40} {}", d.rule, d.locus(), d.message);
    }
}
