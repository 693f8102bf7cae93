//! Types, validation, ordering and the file format for pipeline graphs.

mod format;
mod pipeline;
mod registry;
mod topo;
mod types;
mod validate;

pub use format::{
    deserialize_pipeline, from_json, materialize, pipeline_digest, serialize_pipeline, to_canonical_text,
    FormatError,
};
pub use pipeline::{Edge, NodeInstance, PipelineGraph, PortRef, EXTERNAL_INPUTS_KEY, FORMAT_VERSION};
pub use registry::{ModuleRegistry, Registration, RegistryError};
pub use topo::{predecessors, topo_order, waves, CycleError};
pub use types::{
    is_identifier, is_module_id, DataType, HyperparamSpec, ModuleSpec, ParamKind, ParamValue, ParamViolation,
    PortSpec, SpecViolation, MAX_LIST_DEPTH,
};
pub use validate::{rules, validate_graph, Diagnostic, ValidationReport};
