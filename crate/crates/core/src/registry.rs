//! Name-keyed registries for interchangeable strategies.
//!
//! A registry maps a strategy name to a factory taking a free-form argument
//! string (`"beam:8"` selects `beam` with argument `"8"`).

use std::collections::BTreeMap;

use crate::{Error, Result};

pub type Factory<T> = fn(Option<&str>) -> Result<Box<T>>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    factories: BTreeMap<&'static str, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: Factory<T>) -> &mut Self {
        self.factories.insert(name, factory);
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    /// Build a strategy from a spec of the form `name` or `name:arg`.
    pub fn build(&self, spec: &str) -> Result<Box<T>> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (spec.trim(), None),
        };
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })?;
        factory(arg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }

    struct Hello(String);

    impl Greeter for Hello {
        fn greet(&self) -> String {
            format!("hello {}", self.0)
        }
    }

    fn hello(arg: Option<&str>) -> Result<Box<dyn Greeter>> {
        Ok(Box::new(Hello(arg.unwrap_or("world").to_string())))
    }

    #[test]
    fn builds_by_name_with_argument() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register("hello", hello);
        assert_eq!(reg.build("hello").unwrap().greet(), "hello world");
        assert_eq!(reg.build("hello:there").unwrap().greet(), "hello there");
        let err = reg.build("bye").err().unwrap();
        assert!(err.to_string().contains("known: hello"));
    }
}
