//! [`Module`] implementations wrapping the builtin operations.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;

use super::miou::compute_miou;
use super::morph::morph_postprocess;
use super::palette::Palette;
use super::scene::{parse_class_list, prompt_build, render_scene, scene_layout, SceneSpec};
use super::segment::{coarse_segment, refine_mask, RefinerParams};
use super::verify::presence_verify;
use super::BuiltinError;
use crate::graph::{DataType, HyperparamSpec, ModuleRegistry, ModuleSpec, PortSpec};
use crate::module::{Module, ModuleContext, ModuleError, PortValues};
use crate::seed;
use crate::value::Value;

impl From<BuiltinError> for ModuleError {
    fn from(e: BuiltinError) -> Self {
        match e {
            BuiltinError::UnknownClass(_) | BuiltinError::InvalidSpec(_) | BuiltinError::DimensionMismatch { .. } => {
                ModuleError::InvalidInput(e.to_string())
            }
            other => ModuleError::Failed(other.to_string()),
        }
    }
}

type RunFn = fn(&ModuleContext) -> Result<PortValues, ModuleError>;

/// A module backed by a plain function.
pub struct FnModule {
    spec: ModuleSpec,
    run: RunFn,
}

impl FnModule {
    pub fn new(spec: ModuleSpec, run: RunFn) -> Self {
        Self { spec, run }
    }
}

impl Module for FnModule {
    fn spec(&self) -> &ModuleSpec {
        &self.spec
    }

    fn run(&self, ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
        (self.run)(ctx)
    }
}

fn spec(
    id: &str,
    display_name: &str,
    description: &str,
    labels: &[&str],
    inputs: Vec<PortSpec>,
    outputs: Vec<PortSpec>,
    hyperparams: Vec<HyperparamSpec>,
) -> ModuleSpec {
    ModuleSpec {
        id: id.to_string(),
        version: 1,
        display_name: display_name.to_string(),
        description: description.to_string(),
        labels: labels.iter().map(|l| l.to_string()).collect::<BTreeSet<_>>(),
        inputs,
        outputs,
        hyperparams,
    }
}

fn port(name: &str, dtype: DataType, description: &str) -> PortSpec {
    PortSpec::new(name, dtype, description)
}

fn outputs<const N: usize>(values: [(&str, Value); N]) -> PortValues {
    values.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn palette() -> &'static Palette {
    Palette::standard()
}

fn dimension(ctx: &ModuleContext, name: &str) -> Result<u32, ModuleError> {
    u32::try_from(ctx.int(name)?).map_err(|_| ModuleError::InvalidInput(format!("`{name}` out of range")))
}

fn run_prompt_build(ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
    let classes = parse_class_list(ctx.string("classes")?)?;
    let pairs: Vec<(&str, u32)> = classes.iter().map(|(n, c)| (n.as_str(), *c)).collect();
    let canvas = (dimension(ctx, "width")?, dimension(ctx, "height")?);
    let spec = prompt_build(&pairs, ctx.string("style")?, canvas, palette())?;
    Ok(outputs([("prompt", Value::text(spec.to_text()))]))
}

/// With probability `failure_rate` one requested class, chosen uniformly, is
/// left out of the scene while the prompt still asks for it.
fn run_synth_scene(ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
    let spec = SceneSpec::parse(ctx.text("prompt")?, palette())?;
    let mut rng = seed::rng(seed::substream(ctx.seed, 3));
    let omit = if rng.random::<f64>() < ctx.float("failure_rate")? {
        Some(spec.classes[rng.random_range(0..spec.classes.len())].name.clone())
    } else {
        None
    };
    let layout = scene_layout(&spec, ctx.seed, palette(), omit.as_deref())?;
    let (image, mask) = render_scene(&spec, &layout, ctx.seed, palette())?;
    Ok(outputs([("image", Value::image(image)), ("mask", Value::mask(mask))]))
}

fn run_verify(ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
    let spec = SceneSpec::parse(ctx.text("prompt")?, palette())?;
    let report = presence_verify(
        ctx.image("image")?,
        &spec.class_names(),
        ctx.float("min_fraction")?,
        ctx.float("tolerance")?,
        palette(),
    )?;
    Ok(outputs([
        ("ok", Value::Boolean(report.pass)),
        ("report", Value::text(report.to_text())),
    ]))
}

fn run_gate(ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
    if !ctx.boolean("pass")? {
        return Err(ModuleError::FilterReject("verification failed".into()));
    }
    Ok(outputs([
        ("image", ctx.input("image")?.clone()),
        ("mask", ctx.input("mask")?.clone()),
    ]))
}

fn run_coarse(ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
    let mask = coarse_segment(ctx.image("image")?, ctx.float("degrade_flip_rate")?, ctx.seed, palette());
    Ok(outputs([("mask", Value::mask(mask))]))
}

fn run_refine(ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
    let params = RefinerParams {
        n_points: ctx.int("n_points")? as usize,
        color_threshold: ctx.float("color_threshold")?,
    };
    let mask = refine_mask(ctx.image("image")?, ctx.mask("coarse")?, params, ctx.seed)?;
    Ok(outputs([("mask", Value::mask(mask))]))
}

fn run_postprocess(ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
    let mask = morph_postprocess(
        ctx.mask("mask")?,
        ctx.int("close_radius")? as usize,
        ctx.int("min_component")? as usize,
    );
    Ok(outputs([("mask", Value::mask(mask))]))
}

/// An undefined mean is reported as 0 on the number port and `null` in the
/// text report.
fn run_miou(ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
    let report = compute_miou(ctx.mask("pred")?, ctx.mask("truth")?)?;
    Ok(outputs([
        ("miou", Value::Number(report.mean.unwrap_or(0.0))),
        ("report", Value::text(report.to_text())),
    ]))
}

fn run_collect(ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
    let mut items = vec![ctx.input("a")?.clone()];
    if let Some(b) = ctx.inputs.get("b") {
        items.push(b.clone());
    }
    Ok(outputs([("masks", Value::List(DataType::Mask, items))]))
}

fn run_delay(ctx: &ModuleContext) -> Result<PortValues, ModuleError> {
    std::thread::sleep(Duration::from_millis(ctx.int("ms")? as u64));
    Ok(outputs([("text", ctx.input("text")?.clone())]))
}

/// Every builtin module, version 1.
pub fn builtin_modules() -> Vec<FnModule> {
    use DataType::{Boolean, Image, Mask, Number, Text};
    vec![
        FnModule::new(
            spec(
                "prompt.build",
                "Scene prompt",
                "Builds a structured scene prompt from a class list such as `car:2,bicycle:1`.",
                &["prompting", "text"],
                vec![],
                vec![port("prompt", Text, "canonical scene prompt")],
                vec![
                    HyperparamSpec::string("classes", "car:1", "comma-separated name:count pairs"),
                    HyperparamSpec::string("style", "plain", "free-form style tag"),
                    HyperparamSpec::int("width", 128, Some(16), Some(4096), "canvas width"),
                    HyperparamSpec::int("height", 128, Some(16), Some(4096), "canvas height"),
                ],
            ),
            run_prompt_build,
        ),
        FnModule::new(
            spec(
                "synth.scene",
                "Scene synthesizer",
                "Procedurally renders the prompted objects and their ground-truth mask.",
                &["generation", "image", "mask"],
                vec![port("prompt", Text, "scene prompt")],
                vec![
                    port("image", Image, "rendered scene"),
                    port("mask", Mask, "ground-truth mask"),
                ],
                vec![HyperparamSpec::float(
                    "failure_rate",
                    0.0,
                    Some(0.0),
                    Some(1.0),
                    "probability of dropping one requested class",
                )],
            ),
            run_synth_scene,
        ),
        FnModule::new(
            spec(
                "verify.presence",
                "Presence verifier",
                "Checks that every prompted class is visible in the image.",
                &["verification", "filter"],
                vec![port("image", Image, "image to check"), port("prompt", Text, "scene prompt")],
                vec![
                    port("ok", Boolean, "all classes present"),
                    port("report", Text, "per-class pixel fractions"),
                ],
                vec![
                    HyperparamSpec::float("min_fraction", 0.002, Some(0.0), Some(1.0), "minimum pixel fraction per class"),
                    HyperparamSpec::float("tolerance", 60.0, Some(0.0), Some(442.0), "RGB distance to the base color"),
                ],
            ),
            run_verify,
        ),
        FnModule::new(
            spec(
                "flow.gate",
                "Gate",
                "Passes the image and mask through, or rejects the sample when `pass` is false.",
                &["filter", "flow"],
                vec![
                    port("pass", Boolean, "gate condition"),
                    port("image", Image, "image"),
                    port("mask", Mask, "mask"),
                ],
                vec![port("image", Image, "image"), port("mask", Mask, "mask")],
                vec![],
            ),
            run_gate,
        ),
        FnModule::new(
            spec(
                "seg.coarse",
                "Coarse segmenter",
                "Nearest-palette-color segmentation with controlled pixel dropout.",
                &["segmentation", "mask"],
                vec![port("image", Image, "input image")],
                vec![port("mask", Mask, "coarse mask")],
                vec![HyperparamSpec::float(
                    "degrade_flip_rate",
                    0.15,
                    Some(0.0),
                    Some(1.0),
                    "probability of dropping a labeled pixel",
                )],
            ),
            run_coarse,
        ),
        FnModule::new(
            spec(
                "seg.refine",
                "Point refiner",
                "Grows regions from random points of each coarse class.",
                &["segmentation", "refinement", "mask"],
                vec![port("image", Image, "input image"), port("coarse", Mask, "coarse mask")],
                vec![port("mask", Mask, "refined mask")],
                vec![
                    HyperparamSpec::int("n_points", 10, Some(1), Some(100_000), "seed points per class"),
                    HyperparamSpec::float("color_threshold", 40.0, Some(0.0), Some(442.0), "RGB distance from the seed color"),
                ],
            ),
            run_refine,
        ),
        FnModule::new(
            spec(
                "mask.postprocess",
                "Mask cleanup",
                "Per-class closing followed by small-component removal.",
                &["segmentation", "postprocess", "mask"],
                vec![port("mask", Mask, "mask")],
                vec![port("mask", Mask, "cleaned mask")],
                vec![
                    HyperparamSpec::int("close_radius", 1, Some(0), Some(64), "closing radius in pixels"),
                    HyperparamSpec::int("min_component", 16, Some(0), Some(16_777_216), "smallest kept component"),
                ],
            ),
            run_postprocess,
        ),
        FnModule::new(
            spec(
                "eval.miou",
                "mIoU",
                "Mean intersection over union of a predicted mask against the truth.",
                &["evaluation", "metrics"],
                vec![port("pred", Mask, "predicted mask"), port("truth", Mask, "reference mask")],
                vec![port("miou", Number, "mean IoU"), port("report", Text, "per-class IoU")],
                vec![],
            ),
            run_miou,
        ),
        FnModule::new(
            spec(
                "mask.collect",
                "Collect masks",
                "Bundles one or two masks into a list.",
                &["mask", "list"],
                vec![port("a", Mask, "first mask"), port("b", Mask, "second mask").optional()],
                vec![port("masks", DataType::list_of(Mask), "collected masks")],
                vec![],
            ),
            run_collect,
        ),
        FnModule::new(
            spec(
                "util.delay",
                "Delay",
                "Passes text through after sleeping.",
                &["util"],
                vec![port("text", Text, "any text")],
                vec![port("text", Text, "the same text")],
                vec![HyperparamSpec::int("ms", 100, Some(0), Some(600_000), "sleep in milliseconds")],
            ),
            run_delay,
        ),
    ]
}

pub fn builtin_registry() -> ModuleRegistry {
    let mut registry = ModuleRegistry::new();
    for module in builtin_modules() {
        registry.register(Arc::new(module)).expect("builtin specs are valid");
    }
    registry
}
