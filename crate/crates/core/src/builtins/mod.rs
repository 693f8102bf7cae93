//! The standard module library: scene synthesis, verification, segmentation,
//! post-processing, evaluation and dataset output.

use std::path::PathBuf;

use crate::raster::RasterError;

pub mod dataset;
pub mod miou;
pub mod modules;
pub mod morph;
pub mod palette;
pub mod pipelines;
pub mod scene;
pub mod segment;
pub mod verify;

pub use dataset::{dataset_write, DatasetManifest, DatasetWriter, SampleEntry};
pub use miou::{compute_miou, MiouReport};
pub use modules::builtin_registry;
pub use morph::morph_postprocess;
pub use palette::{ClassStyle, Palette, ShapeFamily};
pub use pipelines::{scenario_pipeline, synth_only_pipeline, ScenarioConfig};
pub use scene::{parse_class_list, prompt_build, scene_layout, scene_synthesize, SceneSpec};
pub use segment::{coarse_segment, refine_mask, RefinerParams};
pub use verify::{presence_verify, PresenceReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BuiltinError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid palette: {0}")]
    InvalidPalette(String),
    #[error("cannot place `{class}` on a {width}x{height} canvas")]
    PlacementOverflow { class: String, width: u32, height: u32 },
    #[error("dimension mismatch: expected {}x{}, got {}x{}", expected.0, expected.1, actual.0, actual.1)]
    DimensionMismatch { expected: (u32, u32), actual: (u32, u32) },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("io: {0}")]
    Io(String),
    #[error("output directory {0:?} is not empty")]
    DuplicateOutputDir(PathBuf),
}

impl From<std::io::Error> for BuiltinError {
    fn from(e: std::io::Error) -> Self {
        BuiltinError::Io(e.to_string())
    }
}
