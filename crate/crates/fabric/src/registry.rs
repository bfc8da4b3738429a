//! Pre-shared function registry: (key, version) -> evaluation entry point.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use optifab_core::problems::{DETECTOR_TOY, DTLZ2};
use optifab_core::EvaluationOutcome;
use thiserror::Error;

use crate::envelope::{FunctionRef, TaskParams};

pub const BUILTIN_VERSION: &str = "1.0";

pub type EntryFn = dyn Fn(&TaskParams) -> Result<EvaluationOutcome, String> + Send + Sync;

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("function '{key}' already registered with version {existing}, not {requested}")]
    Conflict { key: String, existing: String, requested: String },
    #[error("unknown function '{0}'")]
    Unknown(String),
    #[error("version mismatch for '{key}': submitter {requested}, worker {available}")]
    VersionMismatch { key: String, requested: String, available: String },
}

#[derive(Clone)]
struct Entry {
    version: String,
    func: Arc<EntryFn>,
}

#[derive(Clone, Default)]
pub struct Registry {
    entries: HashMap<String, Entry>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The benchmark problems, keyed by problem name.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        for key in [DTLZ2, DETECTOR_TOY] {
            r.register(key, BUILTIN_VERSION, |p: &TaskParams| {
                p.problem.evaluate(&p.design).map_err(|e| e.to_string())
            })
            .expect("fresh registry");
        }
        r
    }

    /// Registering the same key and version twice replaces the entry.
    pub fn register<F>(&mut self, key: &str, version: &str, func: F) -> Result<(), RegistryError>
    where
        F: Fn(&TaskParams) -> Result<EvaluationOutcome, String> + Send + Sync + 'static,
    {
        if let Some(e) = self.entries.get(key) {
            if e.version != version {
                return Err(RegistryError::Conflict {
                    key: key.into(),
                    existing: e.version.clone(),
                    requested: version.into(),
                });
            }
        }
        self.entries.insert(key.into(), Entry { version: version.into(), func: Arc::new(func) });
        Ok(())
    }

    pub fn resolve(&self, f: &FunctionRef) -> Result<Arc<EntryFn>, RegistryError> {
        let e = self.entries.get(&f.registry_key).ok_or_else(|| RegistryError::Unknown(f.registry_key.clone()))?;
        if e.version != f.version {
            return Err(RegistryError::VersionMismatch {
                key: f.registry_key.clone(),
                requested: f.version.clone(),
                available: e.version.clone(),
            });
        }
        Ok(e.func.clone())
    }

    /// Key -> version, as exchanged at worker registration.
    pub fn manifest(&self) -> BTreeMap<String, String> {
        self.entries.iter().map(|(k, e)| (k.clone(), e.version.clone())).collect()
    }

    /// Keys in `required` that are missing or at another version here.
    pub fn manifest_mismatches(&self, required: &BTreeMap<String, String>) -> Vec<String> {
        required
            .iter()
            .filter_map(|(k, v)| match self.entries.get(k) {
                None => Some(format!("{k}: missing (coordinator has {v})")),
                Some(e) if &e.version != v => Some(format!("{k}: worker {} vs coordinator {v}", e.version)),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use optifab_core::ProblemSpec;

    fn fref(key: &str, v: &str) -> FunctionRef {
        FunctionRef { registry_key: key.into(), version: v.into() }
    }

    #[test]
    fn register_resolve_and_conflicts() {
        let mut r = Registry::builtin();
        let f = r.resolve(&fref(DTLZ2, "1.0")).unwrap();
        let out = f(&TaskParams { design: vec![0.0, 0.5], problem: ProblemSpec::dtlz2(2, 2) }).unwrap();
        assert_eq!(out.objectives.unwrap()[0], 1.0);
        assert_eq!(r.resolve(&fref("nope", "1.0")).err(), Some(RegistryError::Unknown("nope".into())));
        assert!(matches!(r.resolve(&fref(DTLZ2, "2.0")), Err(RegistryError::VersionMismatch { .. })));
        assert!(matches!(r.register(DTLZ2, "2.0", |_| Err("x".into())), Err(RegistryError::Conflict { .. })));
        assert!(r.register(DTLZ2, "1.0", |_| Err("x".into())).is_ok());
    }

    #[test]
    fn manifest_checks() {
        let r = Registry::builtin();
        let mut required = r.manifest();
        assert!(r.manifest_mismatches(&required).is_empty());
        required.insert(DTLZ2.into(), "2.0".into());
        assert_eq!(r.manifest_mismatches(&required).len(), 1);
    }
}
