//! Ready-made pipelines built from the builtin modules.

use crate::graph::{NodeInstance, ParamValue, PipelineGraph};

/// Metadata key naming the port whose image goes into a dataset.
pub const DATASET_IMAGE_KEY: &str = "dataset.image";
/// Metadata key naming the port whose mask goes into a dataset.
pub const DATASET_MASK_KEY: &str = "dataset.mask";

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// `name:count` list, as accepted by `prompt.build`.
    pub classes: String,
    pub width: i64,
    pub height: i64,
    pub failure_rate: f64,
    pub flip_rate: f64,
    pub n_points: i64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            classes: "car:1,bicycle:1,motorbike:1,truck:1".into(),
            width: 128,
            height: 128,
            failure_rate: 0.0,
            flip_rate: 0.15,
            n_points: 10,
        }
    }
}

/// prompt → scene → verify → gate → coarse → refine → post, with `eval`
/// scoring the post-processed mask against the scene's ground truth.
pub fn scenario_pipeline(cfg: &ScenarioConfig) -> PipelineGraph {
    let mut g = PipelineGraph::new("scenario");
    g.add_node(
        NodeInstance::new("prompt", "prompt.build", 1)
            .with_param("classes", ParamValue::Str(cfg.classes.clone()))
            .with_param("width", ParamValue::Int(cfg.width))
            .with_param("height", ParamValue::Int(cfg.height)),
    )
    .add_node(NodeInstance::new("scene", "synth.scene", 1).with_param("failure_rate", ParamValue::Float(cfg.failure_rate)))
    .add_node(NodeInstance::new("verify", "verify.presence", 1))
    .add_node(NodeInstance::new("gate", "flow.gate", 1))
    .add_node(
        NodeInstance::new("coarse", "seg.coarse", 1).with_param("degrade_flip_rate", ParamValue::Float(cfg.flip_rate)),
    )
    .add_node(NodeInstance::new("refine", "seg.refine", 1).with_param("n_points", ParamValue::Int(cfg.n_points)))
    .add_node(NodeInstance::new("post", "mask.postprocess", 1))
    .add_node(NodeInstance::new("eval", "eval.miou", 1))
    .connect(("prompt", "prompt"), ("scene", "prompt"))
    .connect(("scene", "image"), ("verify", "image"))
    .connect(("prompt", "prompt"), ("verify", "prompt"))
    .connect(("verify", "ok"), ("gate", "pass"))
    .connect(("scene", "image"), ("gate", "image"))
    .connect(("scene", "mask"), ("gate", "mask"))
    .connect(("gate", "image"), ("coarse", "image"))
    .connect(("gate", "image"), ("refine", "image"))
    .connect(("coarse", "mask"), ("refine", "coarse"))
    .connect(("refine", "mask"), ("post", "mask"))
    .connect(("post", "mask"), ("eval", "pred"))
    .connect(("gate", "mask"), ("eval", "truth"));
    g.metadata.insert(DATASET_IMAGE_KEY.into(), "gate.image".into());
    g.metadata.insert(DATASET_MASK_KEY.into(), "post.mask".into());
    g
}

/// `scene` fed by an external prompt, passed straight to the dataset.
pub fn synth_only_pipeline() -> PipelineGraph {
    let mut g = PipelineGraph::new("synth-only");
    g.add_node(NodeInstance::new("scene", "synth.scene", 1));
    g.declare_external_input("scene", "prompt");
    g.metadata.insert(DATASET_IMAGE_KEY.into(), "scene.image".into());
    g.metadata.insert(DATASET_MASK_KEY.into(), "scene.mask".into());
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::builtin_registry;
    use crate::graph::validate_graph;

    #[test]
    fn shipped_pipelines_validate() {
        let r = builtin_registry();
        for g in [scenario_pipeline(&ScenarioConfig::default()), synth_only_pipeline()] {
            let report = validate_graph(&g, &r);
            assert!(report.ok, "{report}");
        }
    }
}
