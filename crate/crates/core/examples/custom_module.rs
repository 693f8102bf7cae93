//! Implement a module outside the library, register it next to the builtins
//! and use it in a pipeline: a mask statistic that reports foreground share.

use std::collections::BTreeSet;
use std::sync::Arc;

use segflow::builtins::{builtin_registry, synth_only_pipeline};
use segflow::engine::{Engine, ExecuteOptions, Outputs};
use segflow::graph::{validate_graph, DataType, HyperparamSpec, ModuleSpec, NodeInstance, PortRef, PortSpec};
use segflow::module::{Module, ModuleContext, ModuleError, PortValues};
use segflow::value::Value;

struct ForegroundShare {
    spec: ModuleSpec,
}

impl ForegroundShare {
    fn new() -> Self {
        Self {
            spec: ModuleSpec {
                id: "stats.foreground".into(),
                version: 1,
                display_name: "Foreground share".into(),
                description: "Fraction of non-background pixels, optionally for one class id.".into(),
                labels: BTreeSet::from(["mask".to_string(), "metrics".to_string()]),
                inputs: vec![PortSpec::new("mask", DataType::Mask, "mask to measure")],
                outputs: vec![PortSpec::new("share", DataType::Number, "fraction in [0, 1]")],
                hyperparams: vec![HyperparamSpec::int("class", 0, Some(0), Some(255), "0 means any class")],
            },
        }
    }
}

impl Module for ForegroundShare {
    fn spec(&self) -> &ModuleSpec {
        &self.spec
    }

    fn run(&self, ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
        let mask = ctx.mask("mask")?;
        let class = ctx.int("class")? as u8;
        let hits = mask.raw().iter().filter(|&&c| if class == 0 { c != 0 } else { c == class }).count();
        let share = hits as f64 / mask.len().max(1) as f64;
        Ok(PortValues::from([("share".to_string(), Value::Number(share))]))
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut registry = builtin_registry();
    registry.register(Arc::new(ForegroundShare::new()))?;

    let mut graph = synth_only_pipeline();
    graph.add_node(NodeInstance::new("share", "stats.foreground", 1)).connect(("scene", "mask"), ("share", "mask"));
    let report = validate_graph(&graph, &registry);
    assert!(report.ok, "{report}");

    let prompt = r#"{"canvas":{"height":96,"width":96},"classes":[{"count":3,"name":"car"}],"style":"plain"}"#;
    let inputs = Outputs::from([(PortRef::new("scene", "prompt"), Value::Text(prompt.into()))]);
    let engine = Engine::new(Arc::new(registry));
    for seed in 0..3 {
        let out = engine.run(&graph, &inputs, &ExecuteOptions::seeded(seed))?;
        if let Some(Value::Number(share)) = out.get(&PortRef::new("share", "share")) {
            println!("seed {seed}: foreground share {share:.3}");
        }
    }
    Ok(())
}
