use std::collections::BTreeMap;
use std::sync::Arc;

use crate::module::Module;

use super::types::{ModuleSpec, SpecViolation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("module {id} v{version} is already registered with different content")]
    DuplicateConflict { id: String, version: u32 },
    #[error("invalid module spec `{id}`: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidSpec { id: String, violations: Vec<SpecViolation> },
}

/// What a successful registration did to the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Registration {
    Added,
    /// Same id and version with identical content.
    Unchanged,
    /// Same id with a different version; the listing now shows the new one.
    Replaced { previous_version: u32 },
}

/// Catalog of available modules, one listing per id.
#[derive(Clone, Default)]
pub struct ModuleRegistry {
    modules: BTreeMap<String, Arc<dyn Module>>,
}

impl std::fmt::Debug for ModuleRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.modules.keys()).finish()
    }
}

impl ModuleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, module: Arc<dyn Module>) -> Result<Registration, RegistryError> {
        let spec = module.spec();
        let violations = spec.check();
        if !violations.is_empty() {
            return Err(RegistryError::InvalidSpec { id: spec.id.clone(), violations });
        }
        let outcome = match self.modules.get(&spec.id) {
            None => Registration::Added,
            Some(existing) if existing.spec().version != spec.version => Registration::Replaced {
                previous_version: existing.spec().version,
            },
            Some(existing) if existing.spec().canonical_bytes() == spec.canonical_bytes() => {
                return Ok(Registration::Unchanged)
            }
            Some(_) => {
                return Err(RegistryError::DuplicateConflict {
                    id: spec.id.clone(),
                    version: spec.version,
                })
            }
        };
        self.modules.insert(spec.id.clone(), module);
        Ok(outcome)
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn Module>> {
        self.modules.get(id)
    }

    pub fn spec(&self, id: &str) -> Option<&ModuleSpec> {
        self.modules.get(id).map(|m| m.spec())
    }

    /// Specs sorted by id.
    pub fn specs(&self) -> Vec<&ModuleSpec> {
        self.modules.values().map(|m| m.spec()).collect()
    }

    /// Specs carrying `label`, sorted by id.
    pub fn with_label(&self, label: &str) -> Vec<&ModuleSpec> {
        self.specs().into_iter().filter(|s| s.has_label(label)).collect()
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DataType, PortSpec};
    use crate::module::{ModuleContext, ModuleError, PortValues};

    struct Stub(ModuleSpec);

    impl Module for Stub {
        fn spec(&self) -> &ModuleSpec {
            &self.0
        }

        fn run(&self, _: &ModuleContext) -> Result<PortValues, ModuleError> {
            Ok(PortValues::new())
        }
    }

    fn scene_spec(version: u32, output: DataType) -> Arc<dyn Module> {
        Arc::new(Stub(ModuleSpec {
            id: "synth.scene".into(),
            version,
            display_name: "Scene".into(),
            description: String::new(),
            labels: ["generation".to_string()].into(),
            inputs: vec![PortSpec::new("prompt", DataType::Text, "")],
            outputs: vec![PortSpec::new("image", output, "")],
            hyperparams: vec![],
        }))
    }

    #[test]
    fn first_registration_is_listed() {
        let mut reg = ModuleRegistry::new();
        assert_eq!(reg.register(scene_spec(1, DataType::Image)), Ok(Registration::Added));
        assert_eq!(reg.specs().len(), 1);
        assert_eq!(reg.with_label("generation").len(), 1);
    }

    #[test]
    fn identical_reregistration_is_idempotent() {
        let mut reg = ModuleRegistry::new();
        reg.register(scene_spec(1, DataType::Image)).unwrap();
        assert_eq!(reg.register(scene_spec(1, DataType::Image)), Ok(Registration::Unchanged));
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn changed_content_same_version_conflicts() {
        let mut reg = ModuleRegistry::new();
        let original = scene_spec(1, DataType::Image);
        let changed = scene_spec(1, DataType::Mask);
        // Oracle: the canonical serializations differ byte-wise.
        assert_ne!(original.spec().canonical_bytes(), changed.spec().canonical_bytes());
        reg.register(original).unwrap();
        assert_eq!(
            reg.register(changed),
            Err(RegistryError::DuplicateConflict { id: "synth.scene".into(), version: 1 })
        );
        assert_eq!(reg.spec("synth.scene").unwrap().outputs[0].dtype, DataType::Image);
    }

    #[test]
    fn new_version_replaces_listing() {
        let mut reg = ModuleRegistry::new();
        reg.register(scene_spec(1, DataType::Image)).unwrap();
        assert_eq!(
            reg.register(scene_spec(2, DataType::Mask)),
            Ok(Registration::Replaced { previous_version: 1 })
        );
        assert_eq!(reg.spec("synth.scene").unwrap().version, 2);
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn invalid_spec_names_rule() {
        let mut reg = ModuleRegistry::new();
        let err = reg.register(Arc::new(Stub(ModuleSpec {
            id: "synth.empty".into(),
            version: 1,
            display_name: String::new(),
            description: String::new(),
            labels: Default::default(),
            inputs: vec![],
            outputs: vec![],
            hyperparams: vec![],
        })));
        match err {
            Err(RegistryError::InvalidSpec { violations, .. }) => assert_eq!(violations[0].rule, "no_outputs"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
