//! Name-keyed registries of interchangeable strategies.
//!
//! Metric backends, CDI estimators and robust losses are all selected at
//! runtime by a string from the config file or the command line. Each family
//! owns a [`Registry`] of factories; a factory receives the parsed parameters
//! it needs and returns a boxed trait object.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

type Factory<T, P> = Box<dyn Fn(&P) -> Result<Box<T>> + Send + Sync>;

pub struct Registry<T: ?Sized, P> {
    kind: &'static str,
    factories: BTreeMap<&'static str, Factory<T, P>>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: &'static str,
        factory: impl Fn(&P) -> Result<Box<T>> + Send + Sync + 'static,
    ) -> &mut Self {
        self.factories.insert(name, Box::new(factory));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(&self, name: &str, params: &P) -> Result<Box<T>> {
        match self.factories.get(name) {
            Some(factory) => factory(params),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}
