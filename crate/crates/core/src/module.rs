//! The contract every pipeline module implements.

use std::collections::BTreeMap;

use crate::graph::{ModuleSpec, ParamValue};
use crate::value::Value;

/// Named values on a module's input or output ports.
pub type PortValues = BTreeMap<String, Value>;

/// Errors a module can raise while running.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModuleError {
    /// The sample is rejected by a filter stage. Batch drivers skip the sample.
    #[error("filter rejected sample: {0}")]
    FilterReject(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{0}")]
    Failed(String),
}

impl ModuleError {
    pub fn is_filter_reject(&self) -> bool {
        matches!(self, ModuleError::FilterReject(_))
    }
}

/// Inputs, resolved hyperparameters and the node's derived seed.
#[derive(Debug, Clone)]
pub struct ModuleContext {
    pub inputs: PortValues,
    /// Every declared hyperparameter, defaults filled in.
    pub params: BTreeMap<String, ParamValue>,
    pub seed: u64,
}

impl ModuleContext {
    pub fn input(&self, name: &str) -> Result<&Value, ModuleError> {
        self.inputs
            .get(name)
            .ok_or_else(|| ModuleError::InvalidInput(format!("missing input `{name}`")))
    }

    pub fn text(&self, name: &str) -> Result<&str, ModuleError> {
        self.input(name)?
            .as_text()
            .ok_or_else(|| ModuleError::InvalidInput(format!("`{name}` is not text")))
    }

    pub fn image(&self, name: &str) -> Result<&crate::raster::Image, ModuleError> {
        self.input(name)?
            .as_image()
            .map(|i| &**i)
            .ok_or_else(|| ModuleError::InvalidInput(format!("`{name}` is not an image")))
    }

    pub fn mask(&self, name: &str) -> Result<&crate::raster::Mask, ModuleError> {
        self.input(name)?
            .as_mask()
            .map(|m| &**m)
            .ok_or_else(|| ModuleError::InvalidInput(format!("`{name}` is not a mask")))
    }

    pub fn boolean(&self, name: &str) -> Result<bool, ModuleError> {
        self.input(name)?
            .as_bool()
            .ok_or_else(|| ModuleError::InvalidInput(format!("`{name}` is not a boolean")))
    }

    fn param(&self, name: &str) -> Result<&ParamValue, ModuleError> {
        self.params
            .get(name)
            .ok_or_else(|| ModuleError::InvalidInput(format!("missing hyperparameter `{name}`")))
    }

    pub fn int(&self, name: &str) -> Result<i64, ModuleError> {
        self.param(name)?
            .as_i64()
            .ok_or_else(|| ModuleError::InvalidInput(format!("`{name}` is not an integer")))
    }

    pub fn float(&self, name: &str) -> Result<f64, ModuleError> {
        self.param(name)?
            .as_f64()
            .ok_or_else(|| ModuleError::InvalidInput(format!("`{name}` is not numeric")))
    }

    pub fn string(&self, name: &str) -> Result<&str, ModuleError> {
        self.param(name)?
            .as_str()
            .ok_or_else(|| ModuleError::InvalidInput(format!("`{name}` is not a string")))
    }

    pub fn flag(&self, name: &str) -> Result<bool, ModuleError> {
        self.param(name)?
            .as_bool()
            .ok_or_else(|| ModuleError::InvalidInput(format!("`{name}` is not a boolean")))
    }
}

/// A pure processing unit: outputs depend only on inputs, params and seed.
pub trait Module: Send + Sync {
    fn spec(&self) -> &ModuleSpec;

    fn run(&self, ctx: &ModuleContext) -> Result<PortValues, ModuleError>;
}
