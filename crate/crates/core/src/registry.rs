//! Name → implementation tables used to pick strategies at runtime.
//!
//! Models, optimizers, schedulers, collective backends, cache policies and
//! dataset generators are each looked up by the name that appears in a run
//! configuration.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("unknown {kind} '{name}' (known: {})", known.join(", "))]
    Unknown { kind: &'static str, name: String, known: Vec<&'static str> },
    #[error("{kind} '{name}' is already registered")]
    Duplicate { kind: &'static str, name: String },
}

pub struct Registry<T> {
    kind: &'static str,
    entries: Vec<(&'static str, T)>,
}

impl<T> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, entries: Vec::new() }
    }

    pub fn register(&mut self, name: &'static str, item: T) -> Result<(), RegistryError> {
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(RegistryError::Duplicate { kind: self.kind, name: name.to_string() });
        }
        self.entries.push((name, item));
        Ok(())
    }

    /// Builder-style [`register`](Self::register) for static tables.
    pub fn with(mut self, name: &'static str, item: T) -> Self {
        self.register(name, item).expect("static registry names are unique");
        self
    }

    pub fn get(&self, name: &str) -> Result<&T, RegistryError> {
        self.entries.iter().find(|(n, _)| *n == name).map(|(_, item)| item).ok_or_else(|| RegistryError::Unknown {
            kind: self.kind,
            name: name.to_string(),
            known: self.names(),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}
